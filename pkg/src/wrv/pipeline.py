"""Stage orchestration shared by the command line tools.

Handles document loading, the per-document token cache under a run
directory, codebook/PCA/descriptor persistence and corpus evaluation.
File writes are atomic and skipped when content is unchanged, so any
stage can be rerun and acts as a no-op on identical inputs.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import container, preproc
from .codebook import Codebook, minibatch_kmeans
from .config import PipelineConfig
from .encoder import (
    DocumentTokens,
    PageDescriptor,
    PcaModel,
    pca_fit,
    pca_transform,
    pooled_vector,
    power_l2_normalize,
    window_tokens,
)
from .manifest import Manifest, ManifestEntry
from .retrieval import (
    Corpus,
    RankedList,
    average_precision,
    graph_rerank,
    krnn_rerank,
    mean_average_precision,
    rank_all,
    top1_accuracy,
)
from .vit import VitConfig, VitWeights


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_document(
    entry: ManifestEntry,
    binarize: bool = False,
    invert: bool = False,
    config: PipelineConfig | None = None,
) -> np.ndarray:
    """Load one manifest entry as a {0, 1} mask.

    With ``binarize`` the file is read as grayscale and thresholded;
    otherwise it is interpreted as an already-binary image.
    """
    if binarize:
        cfg = config or PipelineConfig()
        gray = preproc.load_gray(entry.path)
        mask = preproc.sauvola_binarize(
            gray, cfg.binarize_window, cfg.binarize_k, cfg.binarize_r
        )
        return preproc.invert(mask) if invert else mask
    return preproc.load_mask(entry.path, inverted=invert)


# ---------------------------------------------------------------------------
# Token cache
# ---------------------------------------------------------------------------


def _require_plain_id(doc_id: str) -> str:
    if "/" in doc_id or "\\" in doc_id or doc_id in ("", ".", ".."):
        raise ValueError(f"document id {doc_id!r} is not filesystem safe")
    return doc_id


def token_cache_path(run_dir: Path, stride: int, doc_id: str) -> Path:
    return run_dir / "features" / f"s{stride}" / f"{_require_plain_id(doc_id)}.wrv"


def _cache_meta(config: PipelineConfig, stride: int, weights_sha: str) -> dict[str, np.ndarray]:
    return {
        "meta.window": np.array([config.window_size, stride], dtype=np.int64),
        "meta.min_fg": np.array([config.min_window_fg], dtype=np.float64),
        "meta.weights_sha": np.frombuffer(bytes.fromhex(weights_sha), dtype=np.uint8),
    }


def doc_tokens(
    doc: np.ndarray,
    vit_cfg: VitConfig,
    weights: VitWeights,
    config: PipelineConfig,
    stride: int,
    run_dir: Path | None = None,
    doc_id: str = "?",
    weights_sha: str = "",
) -> DocumentTokens:
    """Window tokens for one document, cached under the run directory."""
    cache = None
    if run_dir is not None:
        cache = token_cache_path(run_dir, stride, doc_id)
        meta = _cache_meta(config, stride, weights_sha)
        if cache.exists():
            entries = container.read_tensors(cache)
            if all(
                name in entries and np.array_equal(entries[name], value)
                for name, value in meta.items()
            ):
                return DocumentTokens(
                    tokens=entries["tokens"],
                    fg_counts=entries["fg_counts"],
                    cls_tokens=entries["cls_tokens"],
                )
    toks = window_tokens(
        doc, vit_cfg, weights,
        window_size=config.window_size,
        stride=stride,
        min_window_fg=config.min_window_fg,
    )
    if cache is not None:
        payload = {
            "tokens": toks.tokens.astype(np.float32),
            "fg_counts": toks.fg_counts.astype(np.int64),
            "cls_tokens": toks.cls_tokens.astype(np.float32),
        }
        payload.update(_cache_meta(config, stride, weights_sha))
        container.write_tensors(cache, payload)
    return toks


def kmeans_iterations(n_tokens: int, batch_size: int, epochs: int) -> int:
    """Batch updates equivalent to ``epochs`` passes over the data."""
    return max(1, epochs * math.ceil(max(n_tokens, 1) / batch_size))


def fit_codebook(
    train_tokens: np.ndarray, config: PipelineConfig, manifest_sha: str = ""
) -> Codebook:
    iters = kmeans_iterations(train_tokens.shape[0], config.kmeans_batch, config.kmeans_epochs)
    cb = minibatch_kmeans(
        train_tokens,
        config.centroids,
        batch_size=config.kmeans_batch,
        iterations=iters,
        seed=config.seed,
    )
    cb.meta["manifest_sha"] = manifest_sha
    return cb


# ---------------------------------------------------------------------------
# Persistence of fitted models and descriptors
# ---------------------------------------------------------------------------


def save_codebook(path: str | Path, cb: Codebook) -> bool:
    sha = cb.meta.get("manifest_sha", "")
    return container.write_tensors(path, {
        "centroids": np.asarray(cb.centroids, dtype=np.float64),
        "meta.params": np.array(
            [cb.size, cb.dim, int(cb.meta.get("seed", 0))], dtype=np.int64
        ),
        "meta.manifest_sha": np.frombuffer(bytes.fromhex(sha), dtype=np.uint8),
    })


def load_codebook(path: str | Path) -> Codebook:
    entries = container.read_tensors(path)
    c, e, seed = (int(v) for v in entries["meta.params"])
    cents = entries["centroids"]
    if cents.shape != (c, e):
        raise ValueError(f"codebook {path}: header/centroid shape mismatch")
    return Codebook(
        centroids=cents,
        meta={
            "c": c,
            "seed": seed,
            "manifest_sha": bytes(entries["meta.manifest_sha"]).hex(),
        },
    )


def save_pca(path: str | Path, model: PcaModel) -> bool:
    return container.write_tensors(path, {
        "mean": model.mean,
        "components": model.components,
        "eigenvalues": model.eigenvalues,
        "epsilon": np.array([model.epsilon], dtype=np.float64),
    })


def load_pca(path: str | Path) -> PcaModel:
    entries = container.read_tensors(path)
    return PcaModel(
        mean=entries["mean"],
        components=entries["components"],
        eigenvalues=entries["eigenvalues"],
        epsilon=float(entries["epsilon"][0]),
    )


def save_descriptors(path: str | Path, descriptors: list[PageDescriptor]) -> bool:
    return container.write_tensors(
        path,
        {d.doc_id: np.asarray(d.values, dtype=np.float32) for d in descriptors},
    )


def load_descriptors(path: str | Path) -> dict[str, np.ndarray]:
    return container.read_tensors(path)


# ---------------------------------------------------------------------------
# Encoding and PCA fitting over manifest splits
# ---------------------------------------------------------------------------

PCA_RANK_HINT = (
    "requested dimensionality exceeds data rank; lower pca_dim (D) or add "
    "training documents"
)


def page_vector(toks: DocumentTokens, cb: Codebook | None,
                config: PipelineConfig, doc_id: str = "?") -> np.ndarray:
    """Pooled, power- and L2-normalized page vector (pre-PCA)."""
    raw = pooled_vector(toks, cb, t_fg=config.t_fg, encoding=config.encoding,
                        doc_id=doc_id)
    return power_l2_normalize(raw, config.power)


def fit_pca_on_vectors(train_vectors: np.ndarray, config: PipelineConfig) -> PcaModel:
    try:
        return pca_fit(train_vectors, config.pca_dim, config.pca_epsilon)
    except ValueError as exc:
        if "rank" in str(exc):
            raise ValueError(PCA_RANK_HINT) from exc
        raise


@dataclass(frozen=True)
class StageMetrics:
    stage: str
    map: float
    top1: float
    rankings: list[RankedList]
    aps: dict[str, float | None]


def evaluate_corpus(
    corpus: Corpus,
    config: PipelineConfig,
    allow_zero: bool = False,
    skip_unmatched: bool = True,
) -> list[StageMetrics]:
    """Baseline metrics plus, when configured, a reranked stage."""
    stages = [("baseline", corpus)]
    if config.rerank == "krnn":
        stages.append((
            f"krnn(k={config.krnn_k})",
            krnn_rerank(corpus, config.krnn_k, allow_zero=allow_zero),
        ))
    elif config.rerank == "graph":
        stages.append((
            f"graph(k1={config.graph_k1},k2={config.graph_k2},L={config.graph_iterations})",
            graph_rerank(
                corpus, config.graph_k1, config.graph_k2,
                config.graph_iterations, allow_zero=allow_zero,
            ),
        ))
    labels = corpus.label_map()
    out = []
    for name, stage_corpus in stages:
        rankings = rank_all(stage_corpus, allow_zero=allow_zero)
        out.append(StageMetrics(
            stage=name,
            map=mean_average_precision(rankings, labels, skip_unmatched),
            top1=top1_accuracy(rankings, labels, skip_unmatched),
            rankings=rankings,
            aps={r.query_id: average_precision(r, labels) for r in rankings},
        ))
    return out


def metrics_csv(stages: list[StageMetrics], labels: dict[str, str]) -> str:
    """Per-query AP rows plus one ALL summary row per stage."""
    lines = ["stage,query,ap,top1_hit"]
    for st in stages:
        for ranking in st.rankings:
            ap = st.aps[ranking.query_id]
            hit = int(labels[ranking.doc_ids[0]] == labels[ranking.query_id])
            ap_text = "" if ap is None else f"{ap:.6f}"
            lines.append(f"{st.stage},{ranking.query_id},{ap_text},{hit}")
        lines.append(f"{st.stage},ALL,{st.map:.6f},{st.top1:.6f}")
    return "\n".join(lines) + "\n"


def corpus_from_descriptors(
    descriptors: dict[str, np.ndarray], entries: list[ManifestEntry]
) -> Corpus:
    missing = [e.doc_id for e in entries if e.doc_id not in descriptors]
    if missing:
        raise ValueError(
            f"{len(missing)} manifest documents lack descriptors, first: {missing[0]}"
        )
    return Corpus(
        ids=[e.doc_id for e in entries],
        vectors=np.stack([np.asarray(descriptors[e.doc_id], dtype=np.float64)
                          for e in entries]),
        labels=[e.writer_id for e in entries],
    )


def update_run_record(run_dir: Path, section: str, payload: dict) -> None:
    """Merge one command's provenance into ``run.json``."""
    record_path = run_dir / "run.json"
    record = {}
    if record_path.exists():
        record = json.loads(record_path.read_text())
    record[section] = payload
    container.write_bytes(
        record_path, (json.dumps(record, indent=2, sort_keys=True) + "\n").encode()
    )


def config_payload(config: PipelineConfig) -> dict:
    return asdict(config)


def sweep_config(config: PipelineConfig, param: str, value: int) -> PipelineConfig:
    """Configuration for one grid point of a parameter sweep."""
    field = {
        "stride": "eval_stride",
        "t_fg": "t_fg",
        "centroids": "centroids",
        "pca_dim": "pca_dim",
    }.get(param)
    if field is None:
        raise ValueError(
            f"unknown sweep parameter {param!r}; "
            "expected stride, t_fg, centroids or pca_dim"
        )
    return replace(config, **{field: value}).validate()
