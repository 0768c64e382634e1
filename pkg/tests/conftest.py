import time
from dataclasses import dataclass

import numpy as np
import pytest

from wrv.vit import VitConfig, VitWeights, random_weights


@pytest.fixture(scope="session")
def small_cfg() -> VitConfig:
    """A tiny encoder so forward passes stay cheap in unit tests."""
    return VitConfig(patch_size=4, embed_dim=16, depth=2, heads=2,
                     mlp_ratio=2, input_size=16)


@pytest.fixture(scope="session")
def small_weights(small_cfg):
    return random_weights(small_cfg, seed=7)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@dataclass
class SynthPipeline:
    """Stock-parameter run over the synthetic 10-writer corpus."""

    cfg: VitConfig
    weights: VitWeights
    docs: list
    tokens: dict
    codebook: object
    page_vectors: np.ndarray  # power/L2-normalized pre-projection vectors
    pca: object
    corpus: object
    pca_dim: int
    build_seconds: float


@pytest.fixture(scope="session")
def synth_pipeline() -> SynthPipeline:
    """Full-size pipeline on 10 writers x 5 near-duplicate pages.

    Runs the stock parameters (window 224, stride 224, 2.5% window
    filter, ink threshold 10, 100 centers, power 0.5) with one
    deviation: the projection keeps writers - 1 = 9 dimensions because
    a 50-page corpus has rank 49 and whitening directions beyond the
    between-writer subspace only rescale page noise.
    """
    from wrv import synth
    from wrv.codebook import minibatch_kmeans
    from wrv.encoder import (
        pca_fit,
        pca_transform,
        power_l2_normalize,
        vlad_encode,
        window_tokens,
    )
    from wrv.pipeline import kmeans_iterations
    from wrv.retrieval import Corpus

    start = time.perf_counter()
    cfg = VitConfig()
    weights = random_weights(cfg, seed=0)
    docs = synth.writer_corpus(writers=10, pages=5, height=336, width=336,
                               noise=0.01, seed=0)
    tokens = {
        d.doc_id: window_tokens(d.pixels, cfg, weights,
                                window_size=224, stride=224, min_window_fg=0.025)
        for d in docs
    }
    fg = np.concatenate([tokens[d.doc_id].foreground(10) for d in docs])
    iters = kmeans_iterations(fg.shape[0], 10_000, 10)
    cb = minibatch_kmeans(fg, 100, batch_size=10_000, iterations=iters, seed=0)
    page_vectors = np.stack([
        power_l2_normalize(vlad_encode(tokens[d.doc_id].foreground(10), cb), 0.5)
        for d in docs
    ])
    pca_dim = 9  # writers - 1
    pca = pca_fit(page_vectors, pca_dim, 1e-8)
    corpus = Corpus(
        ids=[d.doc_id for d in docs],
        vectors=pca_transform(pca, page_vectors),
        labels=[d.writer_id for d in docs],
    )
    return SynthPipeline(
        cfg=cfg,
        weights=weights,
        docs=docs,
        tokens=tokens,
        codebook=cb,
        page_vectors=page_vectors,
        pca=pca,
        corpus=corpus,
        pca_dim=pca_dim,
        build_seconds=time.perf_counter() - start,
    )
