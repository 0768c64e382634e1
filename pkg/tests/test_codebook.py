import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wrv.codebook import (
    assign_nearest,
    extract_foreground_tokens,
    kmeans_plusplus,
    minibatch_kmeans,
    quantization_error,
)
from wrv.sampler import PatchGrid
from wrv.vit import TokenSequence


def lloyd_oracle(x: np.ndarray, init: np.ndarray, iters: int = 500) -> np.ndarray:
    """Reference batch k-means: assign all, move to exact cluster means."""
    centers = init.astype(np.float64).copy()
    for _ in range(iters):
        idx = assign_nearest(x, centers)
        new = centers.copy()
        for c in range(centers.shape[0]):
            members = x[idx == c]
            if len(members):
                new[c] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    return centers


def separated_blobs(seed: int):
    """Clusters far apart relative to their spread, for stable assignment."""
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 6))
    dim = int(rng.integers(1, 5))
    centers = rng.uniform(-50.0, 50.0, size=(c, dim))
    for i in range(c):
        for j in range(i):
            while np.linalg.norm(centers[i] - centers[j]) < 20.0:
                centers[i] = rng.uniform(-50.0, 50.0, size=dim)
    points = np.concatenate([
        ct + rng.normal(0.0, 0.5, size=(int(rng.integers(5, 25)), dim))
        for ct in centers
    ])
    return points, c


def _tokens(fg_counts):
    counts = np.asarray(fg_counts, dtype=np.int64)
    length = counts.size
    patches = np.zeros((length, 4), dtype=np.uint8)
    grid = PatchGrid(patch_size=2, patches=patches, fg_counts=counts)
    toks = np.arange(length, dtype=np.float64)[:, None] * np.ones(3)
    seq = TokenSequence(cls=np.full(3, -1.0), patch_tokens=toks)
    return seq, grid


class TestExtractForegroundTokens:
    def test_empty_when_all_background(self):
        seq, grid = _tokens([0, 0, 0, 0])
        assert extract_foreground_tokens(seq, grid, t_fg=1).shape == (0, 3)

    def test_zero_threshold_keeps_everything(self):
        seq, grid = _tokens([0, 2, 0, 4])
        out = extract_foreground_tokens(seq, grid, t_fg=0)
        assert out.shape == (4, 3)
        assert np.array_equal(out, seq.patch_tokens)

    def test_threshold_is_inclusive(self):
        seq, grid = _tokens([0, 9, 10, 256])
        out = extract_foreground_tokens(seq, grid, t_fg=10)
        assert np.array_equal(out, seq.patch_tokens[[2, 3]])

    def test_never_includes_cls(self):
        seq, grid = _tokens([5, 5])
        out = extract_foreground_tokens(seq, grid, t_fg=0)
        assert not (out == -1.0).all(axis=1).any()

    @given(st.lists(st.integers(0, 60), min_size=1, max_size=30))
    @settings(max_examples=40, deadline=None)
    def test_count_non_increasing_in_threshold(self, counts):
        seq, grid = _tokens(counts)
        sizes = [
            extract_foreground_tokens(seq, grid, t).shape[0]
            for t in (0, 1, 10, 20, 50)
        ]
        assert sizes == sorted(sizes, reverse=True)
        assert sizes[0] == len(counts)

    def test_rejects_mismatched_grid(self):
        seq, _ = _tokens([1, 2, 3])
        _, other = _tokens([1, 2])
        with pytest.raises(ValueError, match="does not match"):
            extract_foreground_tokens(seq, other, 0)


class TestMinibatchKmeans:
    def test_two_pair_line(self):
        x = np.array([[0.0], [1.0], [10.0], [11.0]])
        cb = minibatch_kmeans(x, 2, batch_size=4, iterations=50, seed=0)
        got = np.sort(cb.centroids.ravel())
        assert np.allclose(got, [0.5, 10.5], atol=1e-6)

    def test_centroid_per_distinct_point(self):
        x = np.array([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        cb = minibatch_kmeans(x, 3, batch_size=3, iterations=10, seed=1)
        assert quantization_error(x, cb.centroids) == 0.0
        as_rows = {tuple(row) for row in cb.centroids}
        assert as_rows == {tuple(row) for row in x}

    def test_single_center_converges_to_mean(self):
        rng = np.random.default_rng(4)
        x = rng.normal(2.0, 1.5, size=(60, 3))
        cb = minibatch_kmeans(x, 1, batch_size=60, iterations=50, seed=4)
        exact = quantization_error(x, x.mean(axis=0, keepdims=True))
        assert quantization_error(x, cb.centroids) <= exact + 1e-3

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(8)
        x = rng.normal(size=(200, 5))
        a = minibatch_kmeans(x, 7, batch_size=64, iterations=30, seed=9)
        b = minibatch_kmeans(x, 7, batch_size=64, iterations=30, seed=9)
        assert np.array_equal(a.centroids, b.centroids)

    def test_insufficient_points(self):
        x = np.zeros((3, 2))
        with pytest.raises(ValueError, match="insufficient distinct features"):
            minibatch_kmeans(x, 5, batch_size=3, iterations=5, seed=0)

    def test_insufficient_distinct_points(self):
        x = np.tile([[1.0, 2.0], [3.0, 4.0]], (10, 1))  # 20 rows, 2 distinct
        with pytest.raises(ValueError, match="insufficient distinct features"):
            minibatch_kmeans(x, 3, batch_size=20, iterations=5, seed=0)

    def test_centroids_pairwise_distinct(self):
        rng = np.random.default_rng(0)
        x = np.repeat(rng.normal(size=(6, 2)), 5, axis=0)
        cb = minibatch_kmeans(x, 6, batch_size=30, iterations=20, seed=3)
        assert len({row.tobytes() for row in cb.centroids}) == 6

    def test_fit_never_worse_than_init(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = rng.normal(size=(300, 4))
            init = kmeans_plusplus(x, 6, seed=seed)
            cb = minibatch_kmeans(
                x, 6, batch_size=300, iterations=60, seed=seed, init=init
            )
            assert quantization_error(x, cb.centroids) <= quantization_error(x, init)

    def test_batch_update_telescopes_per_sample_rule(self):
        # one full-batch update equals applying the 1/n_c running-mean
        # step sample by sample with assignments fixed at batch start
        rng = np.random.default_rng(5)
        x = rng.normal(size=(40, 3))
        init = kmeans_plusplus(x, 4, seed=5)
        cb = minibatch_kmeans(x, 4, batch_size=40, iterations=1, seed=5, init=init)

        centers = init.copy()
        counts = np.zeros(4, dtype=np.int64)
        order = np.random.default_rng(5).choice(40, size=40, replace=False)
        batch = x[order]
        idx = assign_nearest(batch, centers)
        for sample, c in zip(batch, idx):
            counts[c] += 1
            centers[c] += (sample - centers[c]) / counts[c]
        assert np.allclose(cb.centroids, centers, atol=1e-9)

    @pytest.mark.parametrize("seed", range(6))
    def test_full_batch_matches_lloyd_on_separated_data(self, seed):
        points, c = separated_blobs(seed)
        init = kmeans_plusplus(points, c, seed=seed)
        cb = minibatch_kmeans(
            points, c, batch_size=len(points), iterations=100, seed=seed, init=init
        )
        reference = lloyd_oracle(points, init)
        assert np.abs(cb.centroids - reference).max() < 1e-5
