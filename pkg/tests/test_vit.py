import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wrv.sampler import patchify
from wrv.vit import (
    AttentionMap,
    VitConfig,
    attention_map,
    attmask_select,
    layer_norm,
    load_weights,
    random_weights,
    save_weights,
    vit_forward,
)


def _grid(cfg: VitConfig, seed: int = 0, density: float = 0.3):
    rng = np.random.default_rng(seed)
    px = (rng.random((cfg.input_size, cfg.input_size)) < density).astype(np.uint8)
    return patchify(px, cfg.patch_size)


class TestConfig:
    def test_rejects_indivisible_embed(self):
        with pytest.raises(ValueError, match="divisible by heads"):
            VitConfig(embed_dim=10, heads=3)

    def test_rejects_indivisible_input(self):
        with pytest.raises(ValueError, match="divisible by patch_size"):
            VitConfig(input_size=225)

    def test_sequence_length(self):
        assert VitConfig().seq_len == 196


class TestForward:
    def test_output_shapes(self, small_cfg, small_weights):
        seq = vit_forward(small_cfg, small_weights, _grid(small_cfg))
        assert seq.cls.shape == (small_cfg.embed_dim,)
        assert seq.patch_tokens.shape == (small_cfg.seq_len, small_cfg.embed_dim)
        assert np.all(np.isfinite(seq.cls))
        assert np.all(np.isfinite(seq.patch_tokens))

    def test_deterministic(self, small_cfg, small_weights):
        grid = _grid(small_cfg, seed=5)
        a = vit_forward(small_cfg, small_weights, grid)
        b = vit_forward(small_cfg, small_weights, grid)
        assert np.array_equal(a.cls, b.cls)
        assert np.array_equal(a.patch_tokens, b.patch_tokens)

    def test_perturbed_input_changes_cls(self, small_cfg, small_weights):
        blank = np.zeros((small_cfg.input_size, small_cfg.input_size), np.uint8)
        poked = blank.copy()
        poked[0, 0] = 1
        a = vit_forward(small_cfg, small_weights, patchify(blank, small_cfg.patch_size))
        b = vit_forward(small_cfg, small_weights, patchify(poked, small_cfg.patch_size))
        assert not np.array_equal(a.cls, b.cls)

    def test_swapping_patches_changes_their_tokens(self, small_cfg, small_weights):
        rng = np.random.default_rng(11)
        px = (rng.random((small_cfg.input_size, small_cfg.input_size)) < 0.5).astype(
            np.uint8
        )
        grid = patchify(px, small_cfg.patch_size)
        assert not np.array_equal(grid.patches[0], grid.patches[3])
        swapped_patches = grid.patches.copy()
        swapped_patches[[0, 3]] = swapped_patches[[3, 0]]
        swapped = type(grid)(
            patch_size=grid.patch_size,
            patches=swapped_patches,
            fg_counts=np.count_nonzero(swapped_patches, axis=1).astype(np.int64),
        )
        a = vit_forward(small_cfg, small_weights, grid)
        b = vit_forward(small_cfg, small_weights, swapped)
        # positional embeddings distinguish the two placements
        assert not np.allclose(a.patch_tokens[0], b.patch_tokens[0])
        assert not np.allclose(a.patch_tokens[3], b.patch_tokens[3])

    @given(
        st.sampled_from([(4, 8, 1, 2, 8), (4, 8, 2, 4, 8), (8, 12, 2, 3, 16),
                         (4, 16, 3, 2, 12)])
    )
    @settings(max_examples=8, deadline=None)
    def test_shape_contract_across_configs(self, dims):
        p, e, depth, heads, inp = dims
        cfg = VitConfig(patch_size=p, embed_dim=e, depth=depth, heads=heads,
                        mlp_ratio=2, input_size=inp)
        seq = vit_forward(cfg, random_weights(cfg, seed=1), _grid(cfg, seed=2))
        assert seq.patch_tokens.shape == (cfg.seq_len, e)
        assert seq.cls.shape == (e,)

    def test_rejects_mismatched_grid(self, small_cfg, small_weights):
        other = patchify(np.zeros((24, 24), np.uint8), small_cfg.patch_size)
        with pytest.raises(ValueError, match="does not match config"):
            vit_forward(small_cfg, small_weights, other)

    def test_rejects_non_finite_weights(self, small_cfg):
        weights = random_weights(small_cfg, seed=0)
        weights.blocks[0].qkv_weight[0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            vit_forward(small_cfg, weights, _grid(small_cfg))

    def test_rejects_wrong_depth(self, small_cfg):
        weights = random_weights(small_cfg, seed=0)
        weights.blocks.pop()
        with pytest.raises(ValueError, match="blocks"):
            vit_forward(small_cfg, weights, _grid(small_cfg))


class TestLayerNorm:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_zero_mean_unit_variance(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(0, 3, size=(5, 16)).astype(np.float32)
        y = layer_norm(x, np.ones(16, np.float32), np.zeros(16, np.float32))
        assert np.abs(y.mean(axis=-1)).max() < 1e-4
        assert np.abs(y.var(axis=-1) - 1.0).max() < 1e-4


class TestAttention:
    def test_rows_sum_to_one(self, small_cfg, small_weights):
        am = attention_map(small_cfg, small_weights, _grid(small_cfg))
        assert am.per_head.shape == (small_cfg.heads, small_cfg.seq_len + 1)
        assert np.allclose(am.per_head.sum(axis=1), 1.0, atol=1e-5)
        assert (am.per_head >= 0).all()

    def test_zero_weights_give_uniform_attention(self, small_cfg):
        weights = random_weights(small_cfg, seed=0, std=0.0)
        am = attention_map(small_cfg, weights, _grid(small_cfg))
        n = small_cfg.seq_len + 1
        assert np.allclose(am.per_head, 1.0 / n, atol=1e-6)

    def test_patch_mean_is_head_average(self, small_cfg, small_weights):
        am = attention_map(small_cfg, small_weights, _grid(small_cfg, seed=9))
        recomputed = am.per_head[:, 1:].mean(axis=0)
        assert np.allclose(am.patch_mean, recomputed, atol=1e-6)


class TestAttmaskSelect:
    def _map(self, values):
        values = np.asarray(values, dtype=np.float64)
        return AttentionMap(per_head=values[None, :], patch_mean=values)

    def test_top_half_by_value(self):
        am = self._map([0.4, 0.3, 0.2, 0.1])
        assert attmask_select(am, 0.5, "high") == {0, 1}

    def test_ratio_zero(self):
        assert attmask_select(self._map([0.4, 0.3]), 0.0, "high") == set()

    def test_ratio_one(self):
        am = self._map([0.1, 0.9, 0.5])
        assert attmask_select(am, 1.0, "high") == {0, 1, 2}

    def test_value_ties_go_to_lower_index(self):
        am = self._map([0.25, 0.25, 0.25, 0.25])
        assert attmask_select(am, 0.5, "high") == {0, 1}

    def test_hint_removes_requested_count(self):
        am = self._map(np.linspace(1, 0, 10))
        high = attmask_select(am, 0.8, "high")
        hint = attmask_select(am, 0.8, "hint", hint_reveal=0.5, seed=3)
        assert len(high) == 8
        assert len(hint) == 8 - 4

    @given(
        st.integers(0, 2**32 - 1),
        st.floats(0, 1),
        st.floats(0, 1),
        st.integers(0, 100),
    )
    @settings(max_examples=50, deadline=None)
    def test_hint_subset_of_high(self, seed, ratio, reveal, hint_seed):
        rng = np.random.default_rng(seed)
        am = self._map(rng.random(17))
        high = attmask_select(am, ratio, "high")
        hint = attmask_select(am, ratio, "hint", hint_reveal=reveal, seed=hint_seed)
        assert hint <= high

    def test_rejects_bad_strategy(self):
        with pytest.raises(ValueError, match="strategy"):
            attmask_select(self._map([1.0]), 0.5, "other")


class TestPersistence:
    def test_round_trip(self, tmp_path, small_cfg, small_weights):
        path = tmp_path / "w.wrv"
        save_weights(path, small_cfg, small_weights)
        cfg2, w2 = load_weights(path)
        assert cfg2 == small_cfg
        grid = _grid(small_cfg, seed=4)
        a = vit_forward(small_cfg, small_weights, grid)
        b = vit_forward(cfg2, w2, grid)
        assert np.array_equal(a.patch_tokens, b.patch_tokens)

    def test_missing_entry(self, tmp_path, small_cfg, small_weights):
        from wrv import container

        path = tmp_path / "w.wrv"
        save_weights(path, small_cfg, small_weights)
        entries = container.read_tensors(path)
        del entries["cls_token"]
        container.write_tensors(path, entries)
        with pytest.raises(ValueError, match="cls_token"):
            load_weights(path)
