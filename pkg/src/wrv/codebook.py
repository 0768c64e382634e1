"""Foreground-token selection and minibatch k-means codebooks.

The codebook is the set of cluster centers used to quantize patch
tokens before residual aggregation. Fitting follows the streaming
minibatch scheme: seeded k-means++ initialization, then per batch a
nearest-center assignment and a running-mean update of each center with
learning rate 1 / (cumulative assignment count). Everything is
deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sampler import PatchGrid
from .vit import TokenSequence


@dataclass(frozen=True)
class Codebook:
    """Cluster centers, shape (C, E). ``meta`` records provenance."""

    centroids: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def extract_foreground_tokens(
    tokens: TokenSequence, grid: PatchGrid, t_fg: int = 10
) -> np.ndarray:
    """Patch tokens whose input patch holds at least ``t_fg`` ink pixels.

    Patch order is preserved; the class token is never included.
    Returns an (n, E) array, possibly with n = 0.
    """
    if tokens.patch_tokens.shape[0] != len(grid):
        raise ValueError(
            f"token count {tokens.patch_tokens.shape[0]} does not match "
            f"patch grid length {len(grid)}"
        )
    keep = grid.fg_counts >= t_fg
    return tokens.patch_tokens[keep]


def kmeans_plusplus(x: np.ndarray, c: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Seeded k-means++ center selection. Returns (c, E) float64 centers."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < c:
        raise ValueError("insufficient distinct features")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    chosen = np.empty(c, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for i in range(1, c):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            # all remaining mass sits on already-chosen points; fall back
            # to a uniform draw over the unchosen ones
            unchosen = np.setdiff1d(np.arange(n), chosen[:i])
            idx = rng.choice(unchosen)
        chosen[i] = idx
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def assign_nearest(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center (Euclidean) per row, ties to the lowest index."""
    x = np.asarray(x, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    d2 = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * (x @ centers.T)
        + np.sum(centers * centers, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def quantization_error(x: np.ndarray, centers: np.ndarray) -> float:
    """Mean squared distance from each point to its nearest center."""
    x = np.asarray(x, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    idx = assign_nearest(x, centers)
    return float(np.mean(np.sum((x - centers[idx]) ** 2, axis=1)))


def minibatch_kmeans(
    features: np.ndarray,
    c: int,
    batch_size: int = 10_000,
    iterations: int = 100,
    seed: int = 0,
    init: np.ndarray | None = None,
) -> Codebook:
    """Fit ``c`` cluster centers with streaming minibatch updates.

    Per iteration a batch is drawn without replacement, every point is
    assigned to its nearest center, and each center moves to the running
    mean of all points ever assigned to it. Centers left empty after
    fitting are reseeded to data points; the fitted centers are pairwise
    distinct.

    ``init`` overrides the k-means++ initialization (mainly for tests
    comparing against the untrained starting point).

    Raises ValueError("insufficient distinct features") when fewer than
    ``c`` distinct points exist.
    """
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = x.shape[0]
    if c < 1:
        raise ValueError("c must be >= 1")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if n < c:
        raise ValueError("insufficient distinct features")

    rng = np.random.default_rng(seed)

    if init is None:
        pool = min(n, max(batch_size, 10 * c))
        sample = rng.choice(n, size=pool, replace=False)
        centers = kmeans_plusplus(x[sample], c, rng)
    else:
        centers = np.array(init, dtype=np.float64)
        if centers.shape != (c, x.shape[1]):
            raise ValueError(f"init must have shape {(c, x.shape[1])}")

    counts = np.zeros(c, dtype=np.int64)
    for _ in range(iterations):
        batch = x[rng.choice(n, size=min(batch_size, n), replace=False)]
        idx = assign_nearest(batch, centers)
        add = np.zeros_like(centers)
        np.add.at(add, idx, batch)
        m = np.bincount(idx, minlength=c)
        hit = m > 0
        # running mean with cumulative per-center counts: applying the
        # 1/n_c step once per assigned sample telescopes to this update
        centers[hit] = (
            counts[hit, None] * centers[hit] + add[hit]
        ) / (counts[hit] + m[hit])[:, None]
        counts += m

    centers = _reseed_degenerate(x, centers, counts, rng)
    return Codebook(
        centroids=centers,
        meta={"c": c, "seed": seed, "batch_size": batch_size, "iterations": iterations},
    )


def _reseed_degenerate(
    x: np.ndarray, centers: np.ndarray, counts: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Replace empty or duplicated centers with fresh data points."""
    n, c = x.shape[0], centers.shape[0]
    max_attempts = 100 * c

    def degenerate_indices() -> list[int]:
        bad = [i for i in range(c) if counts[i] == 0]
        seen: dict[bytes, int] = {}
        for i in range(c):
            key = centers[i].tobytes()
            if key in seen and i not in bad:
                bad.append(i)
            else:
                seen.setdefault(key, i)
        return sorted(set(bad))

    attempts = 0
    bad = degenerate_indices()
    while bad:
        existing = {centers[i].tobytes() for i in range(c) if i not in bad}
        for i in bad:
            while True:
                attempts += 1
                if attempts > max_attempts:
                    raise ValueError("insufficient distinct features")
                cand = x[rng.integers(n)]
                if cand.tobytes() not in existing:
                    centers[i] = cand
                    counts[i] = 1
                    existing.add(cand.tobytes())
                    break
        bad = degenerate_indices()
    return centers
