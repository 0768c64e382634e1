"""Aggregation of patch tokens into global page descriptors.

A page's foreground tokens are quantized against the codebook, the
residuals to each center are summed and concatenated, and the resulting
vector is power-normalized, L2-normalized and projected through a
whitened PCA fitted on training pages. A sum-pooling path over class
tokens is available as the codebook-free alternative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, assign_nearest, extract_foreground_tokens
from .sampler import filter_windows, patchify, sample_windows
from .vit import VitConfig, VitWeights, vit_forward


@dataclass(frozen=True)
class PcaModel:
    """Whitened PCA projection.

    ``components`` rows are orthonormal principal directions sorted by
    descending ``eigenvalues`` (sample covariance, divisor n - 1).
    ``epsilon`` regularizes the whitening division.
    """

    mean: np.ndarray  # (d,)
    components: np.ndarray  # (D, d)
    eigenvalues: np.ndarray  # (D,)
    epsilon: float

    @property
    def dim(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class PageDescriptor:
    """Final fixed-length descriptor of one document."""

    doc_id: str
    values: np.ndarray


@dataclass(frozen=True)
class DocumentTokens:
    """All patch tokens of a document's kept windows.

    ``tokens`` stacks the L patch tokens of every window that passed the
    foreground filter; ``fg_counts`` aligns with its rows. ``cls_tokens``
    holds one class token per kept window.
    """

    tokens: np.ndarray  # (n_windows * L, E)
    fg_counts: np.ndarray  # (n_windows * L,)
    cls_tokens: np.ndarray  # (n_windows, E)

    def foreground(self, t_fg: int) -> np.ndarray:
        return self.tokens[self.fg_counts >= t_fg]


def vlad_encode(features: np.ndarray, codebook: Codebook) -> np.ndarray:
    """Sum of residuals to the nearest center, concatenated over centers.

    Each feature is assigned to its nearest centroid (Euclidean, ties to
    the lowest index); center k contributes the sum of (f - mu_k) over
    its assigned features, a zero block if none. Output is the flattened
    (C * E,) float64 concatenation.
    """
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] == 0 or feats.size == 0:
        raise ValueError("no foreground tokens")
    cents = np.asarray(codebook.centroids, dtype=np.float64)
    if feats.shape[1] != cents.shape[1]:
        raise ValueError(
            f"feature dim {feats.shape[1]} != centroid dim {cents.shape[1]}"
        )
    idx = assign_nearest(feats, cents)
    sums = np.zeros_like(cents)
    np.add.at(sums, idx, feats)
    counts = np.bincount(idx, minlength=cents.shape[0])
    sums -= counts[:, None] * cents
    return sums.reshape(-1)


def sum_pool(features: np.ndarray) -> np.ndarray:
    """Plain sum of feature vectors (codebook-free pooling)."""
    feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if feats.shape[0] == 0 or feats.size == 0:
        raise ValueError("no foreground tokens")
    return feats.sum(axis=0)


def power_l2_normalize(v: np.ndarray, power: float = 0.5) -> np.ndarray:
    """Signed elementwise power, then division by the Euclidean norm.

    A zero vector passes through unchanged.
    """
    if power <= 0:
        raise ValueError("power must be positive")
    v = np.asarray(v, dtype=np.float64)
    y = np.sign(v) * np.abs(v) ** power
    norm = np.linalg.norm(y)
    return y if norm == 0.0 else y / norm


def pca_fit(training: np.ndarray, d: int, epsilon: float = 1e-8) -> PcaModel:
    """Fit a whitened PCA on row-vector training data.

    Keeps the top ``d`` eigenpairs of the sample covariance. The
    decomposition runs over the centered data's singular values, so
    requesting more directions than the data's rank fails rather than
    returning noise. Component signs follow the convention that each
    direction's largest-magnitude coordinate is positive.
    """
    x = np.atleast_2d(np.asarray(training, dtype=np.float64))
    n, width = x.shape
    if n < 2:
        raise ValueError("need at least 2 training vectors")
    if not 1 <= d <= min(n, width):
        raise ValueError(
            f"d must be in [1, {min(n, width)}] for {n} vectors of dim {width}"
        )
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")

    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)

    tol = svals[0] * max(n, width) * np.finfo(np.float64).eps if svals.size else 0.0
    rank = int(np.sum(svals > tol))
    if d > rank:
        raise ValueError("requested dimensionality exceeds data rank")

    eigenvalues = (svals[:d] ** 2) / (n - 1)
    components = vt[:d]

    # sign convention: largest-magnitude coordinate of each direction positive
    anchor = np.argmax(np.abs(components), axis=1)
    flip = np.sign(components[np.arange(d), anchor])
    components = components * flip[:, None]

    return PcaModel(
        mean=mean,
        components=components,
        eigenvalues=eigenvalues,
        epsilon=float(epsilon),
    )


def pca_transform(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """Whitened projection: center, project, divide by sqrt(eigenvalue + eps).

    Accepts a single vector or a (n, d) stack of rows.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.mean.shape[0]:
        raise ValueError(
            f"input dim {v.shape[-1]} != model dim {model.mean.shape[0]}"
        )
    projected = (v - model.mean) @ model.components.T
    return projected / np.sqrt(model.eigenvalues + model.epsilon)


def window_tokens(
    doc: np.ndarray,
    cfg: VitConfig,
    weights: VitWeights,
    window_size: int = 224,
    stride: int = 224,
    min_window_fg: float = 0.025,
) -> DocumentTokens:
    """Run the ViT over a document's grid windows and pool the raw outputs.

    Windows below the foreground-fraction cutoff are skipped entirely.
    Returns empty arrays when no window survives.
    """
    windows = filter_windows(sample_windows(doc, window_size, stride), min_window_fg)
    e = cfg.embed_dim
    if not windows:
        return DocumentTokens(
            tokens=np.empty((0, e), dtype=np.float32),
            fg_counts=np.empty(0, dtype=np.int64),
            cls_tokens=np.empty((0, e), dtype=np.float32),
        )
    all_tokens, all_counts, all_cls = [], [], []
    for win in windows:
        grid = patchify(win, cfg.patch_size)
        seq = vit_forward(cfg, weights, grid)
        all_tokens.append(seq.patch_tokens)
        all_counts.append(grid.fg_counts)
        all_cls.append(seq.cls)
    return DocumentTokens(
        tokens=np.concatenate(all_tokens, axis=0),
        fg_counts=np.concatenate(all_counts),
        cls_tokens=np.stack(all_cls, axis=0),
    )


def encode_document(
    doc: np.ndarray,
    doc_id: str,
    cfg: VitConfig,
    weights: VitWeights,
    codebook: Codebook | None,
    pca: PcaModel,
    *,
    window_size: int = 224,
    stride: int = 224,
    min_window_fg: float = 0.025,
    t_fg: int = 10,
    power: float = 0.5,
    encoding: str = "vlad",
) -> PageDescriptor:
    """Full page-descriptor pipeline for one binary document.

    Grid windows are sampled at ``stride``, near-empty windows dropped,
    each window encoded by the ViT, and the foreground tokens of all
    windows pooled into one vector: residual aggregation against the
    codebook for ``encoding="vlad"``, summed class tokens for
    ``encoding="cls_sum"``. The pooled vector is power- and
    L2-normalized and reduced by the whitened PCA.
    """
    toks = window_tokens(doc, cfg, weights, window_size, stride, min_window_fg)
    raw = pooled_vector(toks, codebook, t_fg=t_fg, encoding=encoding, doc_id=doc_id)
    return PageDescriptor(
        doc_id=doc_id,
        values=pca_transform(pca, power_l2_normalize(raw, power)),
    )


def pooled_vector(
    toks: DocumentTokens,
    codebook: Codebook | None,
    t_fg: int = 10,
    encoding: str = "vlad",
    doc_id: str = "?",
) -> np.ndarray:
    """Pool a document's tokens into one un-normalized vector."""
    if encoding == "vlad":
        if codebook is None:
            raise ValueError("vlad encoding needs a codebook")
        feats = toks.foreground(t_fg)
        if feats.shape[0] == 0:
            raise ValueError(f"no foreground tokens in document {doc_id!r}")
        return vlad_encode(feats, codebook)
    if encoding == "cls_sum":
        if toks.cls_tokens.shape[0] == 0:
            raise ValueError(f"no foreground tokens in document {doc_id!r}")
        return sum_pool(toks.cls_tokens)
    raise ValueError(f"unknown encoding {encoding!r}")
