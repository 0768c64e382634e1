"""Pure-numpy vision transformer encoder for binary patch inputs.

Implements the standard pre-norm ViT forward pass: a linear patch
embedding, a learnable class token, additive positional embeddings,
``depth`` blocks of multi-head self-attention and a GELU MLP with
residual connections, and a final layer norm. Only inference is
supported; weights are loaded from a container file or drawn from a
seeded Gaussian for testing.

Also provides the class-token attention map of the final block and the
attention-guided patch selection strategies ``high`` (take the most
attended patches) and ``hint`` (take them, then reveal a random subset).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import erf

from . import container
from .sampler import PatchGrid

LN_EPS = 1e-6


@dataclass(frozen=True)
class VitConfig:
    patch_size: int = 16
    embed_dim: int = 384
    depth: int = 12
    heads: int = 6
    mlp_ratio: int = 4
    input_size: int = 224

    def __post_init__(self) -> None:
        if min(self.patch_size, self.embed_dim, self.depth, self.heads,
               self.mlp_ratio, self.input_size) < 1:
            raise ValueError("all config fields must be positive")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.input_size % self.patch_size:
            raise ValueError("input_size must be divisible by patch_size")

    @property
    def seq_len(self) -> int:
        """Number of patch tokens L."""
        return (self.input_size // self.patch_size) ** 2

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    @property
    def hidden_dim(self) -> int:
        return self.embed_dim * self.mlp_ratio


@dataclass
class BlockWeights:
    norm1_scale: np.ndarray
    norm1_shift: np.ndarray
    qkv_weight: np.ndarray  # (3E, E)
    qkv_bias: np.ndarray
    proj_weight: np.ndarray  # (E, E)
    proj_bias: np.ndarray
    norm2_scale: np.ndarray
    norm2_shift: np.ndarray
    fc1_weight: np.ndarray  # (H, E)
    fc1_bias: np.ndarray
    fc2_weight: np.ndarray  # (E, H)
    fc2_bias: np.ndarray


@dataclass
class VitWeights:
    patch_weight: np.ndarray  # (E, P*P)
    patch_bias: np.ndarray  # (E,)
    cls_token: np.ndarray  # (E,)
    pos_embed: np.ndarray  # (L + 1, E)
    blocks: list[BlockWeights] = field(default_factory=list)
    norm_scale: np.ndarray = None
    norm_shift: np.ndarray = None


@dataclass(frozen=True)
class TokenSequence:
    """ViT output: the class token plus one token per input patch."""

    cls: np.ndarray  # (E,)
    patch_tokens: np.ndarray  # (L, E)


@dataclass(frozen=True)
class AttentionMap:
    """Final-block attention of the class-token query.

    ``per_head`` holds one softmax row per head over all L + 1 keys
    (each row sums to 1). ``patch_mean`` is the head average restricted
    to the L patch keys.
    """

    per_head: np.ndarray  # (heads, L + 1)
    patch_mean: np.ndarray  # (L,)


def layer_norm(x: np.ndarray, scale: np.ndarray, shift: np.ndarray,
               eps: float = LN_EPS) -> np.ndarray:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * scale + shift


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0).astype(x.dtype)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def random_weights(cfg: VitConfig, seed: int = 0, std: float = 0.02) -> VitWeights:
    """Seeded Gaussian weights (std 0.02), zero biases, identity norms."""
    rng = np.random.default_rng(seed)

    def gauss(*shape: int) -> np.ndarray:
        return rng.normal(0.0, std, size=shape).astype(np.float32)

    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape, dtype=np.float32)

    def ones(*shape: int) -> np.ndarray:
        return np.ones(shape, dtype=np.float32)

    e, h = cfg.embed_dim, cfg.hidden_dim
    blocks = [
        BlockWeights(
            norm1_scale=ones(e), norm1_shift=zeros(e),
            qkv_weight=gauss(3 * e, e), qkv_bias=zeros(3 * e),
            proj_weight=gauss(e, e), proj_bias=zeros(e),
            norm2_scale=ones(e), norm2_shift=zeros(e),
            fc1_weight=gauss(h, e), fc1_bias=zeros(h),
            fc2_weight=gauss(e, h), fc2_bias=zeros(e),
        )
        for _ in range(cfg.depth)
    ]
    return VitWeights(
        patch_weight=gauss(e, cfg.patch_size**2),
        patch_bias=zeros(e),
        cls_token=gauss(e),
        pos_embed=gauss(cfg.seq_len + 1, e),
        blocks=blocks,
        norm_scale=ones(e),
        norm_shift=zeros(e),
    )


def validate_weights(cfg: VitConfig, weights: VitWeights) -> None:
    """Check every weight shape against the config and reject non-finite values."""
    e, h, pp = cfg.embed_dim, cfg.hidden_dim, cfg.patch_size**2
    expect: list[tuple[str, np.ndarray, tuple[int, ...]]] = [
        ("patch_weight", weights.patch_weight, (e, pp)),
        ("patch_bias", weights.patch_bias, (e,)),
        ("cls_token", weights.cls_token, (e,)),
        ("pos_embed", weights.pos_embed, (cfg.seq_len + 1, e)),
        ("norm_scale", weights.norm_scale, (e,)),
        ("norm_shift", weights.norm_shift, (e,)),
    ]
    if len(weights.blocks) != cfg.depth:
        raise ValueError(
            f"expected {cfg.depth} blocks, got {len(weights.blocks)}"
        )
    for i, blk in enumerate(weights.blocks):
        expect += [
            (f"blocks.{i}.norm1_scale", blk.norm1_scale, (e,)),
            (f"blocks.{i}.norm1_shift", blk.norm1_shift, (e,)),
            (f"blocks.{i}.qkv_weight", blk.qkv_weight, (3 * e, e)),
            (f"blocks.{i}.qkv_bias", blk.qkv_bias, (3 * e,)),
            (f"blocks.{i}.proj_weight", blk.proj_weight, (e, e)),
            (f"blocks.{i}.proj_bias", blk.proj_bias, (e,)),
            (f"blocks.{i}.norm2_scale", blk.norm2_scale, (e,)),
            (f"blocks.{i}.norm2_shift", blk.norm2_shift, (e,)),
            (f"blocks.{i}.fc1_weight", blk.fc1_weight, (h, e)),
            (f"blocks.{i}.fc1_bias", blk.fc1_bias, (h,)),
            (f"blocks.{i}.fc2_weight", blk.fc2_weight, (e, h)),
            (f"blocks.{i}.fc2_bias", blk.fc2_bias, (e,)),
        ]
    for name, arr, shape in expect:
        if arr is None or tuple(np.shape(arr)) != shape:
            raise ValueError(
                f"{name}: expected shape {shape}, got "
                f"{None if arr is None else tuple(np.shape(arr))}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{name}: non-finite weights")


def _encode(
    cfg: VitConfig, weights: VitWeights, grid: PatchGrid
) -> tuple[np.ndarray, np.ndarray]:
    """Run the encoder. Returns (tokens (L+1, E), last-block attention)."""
    if grid.patch_size != cfg.patch_size:
        raise ValueError(
            f"patch size mismatch: grid {grid.patch_size}, config {cfg.patch_size}"
        )
    if len(grid) != cfg.seq_len or grid.patches.shape[1] != cfg.patch_size**2:
        raise ValueError(
            f"patch grid shape {grid.patches.shape} does not match config "
            f"(L={cfg.seq_len}, P*P={cfg.patch_size ** 2})"
        )
    validate_weights(cfg, weights)

    heads, hd = cfg.heads, cfg.head_dim
    scale = np.float32(1.0 / np.sqrt(hd))

    x = grid.patches.astype(np.float32) @ weights.patch_weight.T + weights.patch_bias
    x = np.concatenate([weights.cls_token[None, :], x], axis=0)
    x = x + weights.pos_embed
    n = x.shape[0]

    attn_last: np.ndarray | None = None
    for blk in weights.blocks:
        y = layer_norm(x, blk.norm1_scale, blk.norm1_shift)
        qkv = y @ blk.qkv_weight.T + blk.qkv_bias
        qkv = qkv.reshape(n, 3, heads, hd).transpose(1, 2, 0, 3)  # (3, heads, n, hd)
        q, k_, v = qkv[0], qkv[1], qkv[2]
        attn = softmax(np.einsum("hid,hjd->hij", q, k_) * scale, axis=-1)
        mixed = np.einsum("hij,hjd->hid", attn, v)  # (heads, n, hd)
        mixed = mixed.transpose(1, 0, 2).reshape(n, cfg.embed_dim)
        x = x + (mixed @ blk.proj_weight.T + blk.proj_bias)

        y = layer_norm(x, blk.norm2_scale, blk.norm2_shift)
        hidden = gelu(y @ blk.fc1_weight.T + blk.fc1_bias)
        x = x + (hidden @ blk.fc2_weight.T + blk.fc2_bias)
        attn_last = attn

    x = layer_norm(x, weights.norm_scale, weights.norm_shift)
    return x, attn_last


def vit_forward(cfg: VitConfig, weights: VitWeights, grid: PatchGrid) -> TokenSequence:
    """Encode a patch grid into the class token plus L patch tokens."""
    tokens, _ = _encode(cfg, weights, grid)
    return TokenSequence(cls=tokens[0], patch_tokens=tokens[1:])


def attention_map(cfg: VitConfig, weights: VitWeights, grid: PatchGrid) -> AttentionMap:
    """Class-token attention of the final block, per head and head-averaged."""
    _, attn = _encode(cfg, weights, grid)
    cls_rows = attn[:, 0, :]  # (heads, L + 1)
    return AttentionMap(
        per_head=cls_rows,
        patch_mean=cls_rows[:, 1:].mean(axis=0),
    )


def attmask_select(
    attn: AttentionMap,
    mask_ratio: float,
    strategy: str = "high",
    hint_reveal: float = 0.0,
    seed: int = 0,
) -> set[int]:
    """Choose patch indices to mask from a class-token attention map.

    ``high`` selects the ceil(mask_ratio * L) most attended patches,
    ties going to the lower index. ``hint`` starts from that set and
    removes a seeded uniform random subset of ceil(hint_reveal * |set|)
    indices.
    """
    if not 0.0 <= mask_ratio <= 1.0:
        raise ValueError("mask_ratio must be in [0, 1]")
    if not 0.0 <= hint_reveal <= 1.0:
        raise ValueError("hint_reveal must be in [0, 1]")
    if strategy not in ("high", "hint"):
        raise ValueError(f"unknown strategy {strategy!r}")

    values = np.asarray(attn.patch_mean, dtype=np.float64)
    length = values.shape[0]
    take = int(np.ceil(mask_ratio * length))
    order = np.lexsort((np.arange(length), -values))
    selected = order[:take]
    if strategy == "high":
        return set(int(i) for i in selected)

    reveal = int(np.ceil(hint_reveal * selected.size))
    if reveal:
        rng = np.random.default_rng(seed)
        drop = rng.choice(np.sort(selected), size=reveal, replace=False)
        return set(int(i) for i in selected) - set(int(i) for i in drop)
    return set(int(i) for i in selected)


# ---------------------------------------------------------------------------
# Weight persistence. Entries follow the common "blocks.<i>.<layer>.<param>"
# naming so externally trained checkpoints can be repacked entry by entry.
# ---------------------------------------------------------------------------

_CONFIG_KEY = "config"


def _weight_entries(cfg: VitConfig, weights: VitWeights) -> dict[str, np.ndarray]:
    entries = {
        _CONFIG_KEY: np.array(
            [cfg.patch_size, cfg.embed_dim, cfg.depth, cfg.heads,
             cfg.mlp_ratio, cfg.input_size],
            dtype=np.int64,
        ),
        "patch_embed.weight": weights.patch_weight,
        "patch_embed.bias": weights.patch_bias,
        "cls_token": weights.cls_token,
        "pos_embed": weights.pos_embed,
    }
    for i, blk in enumerate(weights.blocks):
        p = f"blocks.{i}."
        entries[p + "norm1.weight"] = blk.norm1_scale
        entries[p + "norm1.bias"] = blk.norm1_shift
        entries[p + "attn.qkv.weight"] = blk.qkv_weight
        entries[p + "attn.qkv.bias"] = blk.qkv_bias
        entries[p + "attn.proj.weight"] = blk.proj_weight
        entries[p + "attn.proj.bias"] = blk.proj_bias
        entries[p + "norm2.weight"] = blk.norm2_scale
        entries[p + "norm2.bias"] = blk.norm2_shift
        entries[p + "mlp.fc1.weight"] = blk.fc1_weight
        entries[p + "mlp.fc1.bias"] = blk.fc1_bias
        entries[p + "mlp.fc2.weight"] = blk.fc2_weight
        entries[p + "mlp.fc2.bias"] = blk.fc2_bias
    entries["norm.weight"] = weights.norm_scale
    entries["norm.bias"] = weights.norm_shift
    return entries


def save_weights(path: str | Path, cfg: VitConfig, weights: VitWeights) -> bool:
    validate_weights(cfg, weights)
    f32 = {
        k: (v if k == _CONFIG_KEY else np.asarray(v, dtype=np.float32))
        for k, v in _weight_entries(cfg, weights).items()
    }
    return container.write_tensors(path, f32)


def load_weights(path: str | Path) -> tuple[VitConfig, VitWeights]:
    entries = container.read_tensors(path)
    if _CONFIG_KEY not in entries:
        raise ValueError(f"weight file {path} is missing its config entry")
    ps, e, depth, heads, ratio, inp = (int(v) for v in entries[_CONFIG_KEY])
    cfg = VitConfig(patch_size=ps, embed_dim=e, depth=depth, heads=heads,
                    mlp_ratio=ratio, input_size=inp)

    def get(name: str) -> np.ndarray:
        if name not in entries:
            raise ValueError(f"weight file {path} is missing entry {name!r}")
        return entries[name]

    blocks = []
    for i in range(depth):
        p = f"blocks.{i}."
        blocks.append(BlockWeights(
            norm1_scale=get(p + "norm1.weight"),
            norm1_shift=get(p + "norm1.bias"),
            qkv_weight=get(p + "attn.qkv.weight"),
            qkv_bias=get(p + "attn.qkv.bias"),
            proj_weight=get(p + "attn.proj.weight"),
            proj_bias=get(p + "attn.proj.bias"),
            norm2_scale=get(p + "norm2.weight"),
            norm2_shift=get(p + "norm2.bias"),
            fc1_weight=get(p + "mlp.fc1.weight"),
            fc1_bias=get(p + "mlp.fc1.bias"),
            fc2_weight=get(p + "mlp.fc2.weight"),
            fc2_bias=get(p + "mlp.fc2.bias"),
        ))
    weights = VitWeights(
        patch_weight=get("patch_embed.weight"),
        patch_bias=get("patch_embed.bias"),
        cls_token=get("cls_token"),
        pos_embed=get("pos_embed"),
        blocks=blocks,
        norm_scale=get("norm.weight"),
        norm_shift=get("norm.bias"),
    )
    validate_weights(cfg, weights)
    return cfg, weights
