"""Leave-one-out retrieval, ranking metrics and descriptor reranking.

Every document in a corpus serves once as the query; the remaining
documents are sorted by ascending cosine distance, with exact distance
ties broken by document id so results are independent of corpus order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Corpus:
    """Descriptors plus a writer label per document.

    ``vectors`` is the (n, D) stack of page descriptors aligned with
    ``ids`` and ``labels``.
    """

    ids: list[str]
    vectors: np.ndarray
    labels: list[str]

    def __post_init__(self) -> None:
        vecs = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        object.__setattr__(self, "vectors", vecs)
        n = len(self.ids)
        if vecs.shape[0] != n or len(self.labels) != n:
            raise ValueError("ids, vectors and labels must have equal length")
        if len(set(self.ids)) != n:
            raise ValueError("document ids must be unique")

    def __len__(self) -> int:
        return len(self.ids)

    def label_map(self) -> dict[str, str]:
        return dict(zip(self.ids, self.labels))


@dataclass(frozen=True)
class RankedList:
    """All non-query documents ordered by ascending distance to the query."""

    query_id: str
    doc_ids: list[str]
    distances: np.ndarray = field(repr=False)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """1 - cos(a, b), in [0, 2]. Zero-norm inputs are rejected."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined cosine distance")
    return float(np.clip(1.0 - (a @ b) / (na * nb), 0.0, 2.0))


def _unit_rows(x: np.ndarray, allow_zero: bool) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        if not allow_zero:
            raise ValueError("undefined cosine distance")
        norms = np.where(norms == 0.0, 1.0, norms)
    return x / norms[:, None]


def distance_matrix(corpus: Corpus, allow_zero: bool = False) -> np.ndarray:
    """Dense pairwise cosine distances, clipped to [0, 2].

    With ``allow_zero`` a zero-norm descriptor sits at neutral distance
    1 from everything instead of raising.
    """
    unit = _unit_rows(corpus.vectors, allow_zero)
    return np.clip(1.0 - unit @ unit.T, 0.0, 2.0)


def rank_all(corpus: Corpus, allow_zero: bool = False) -> list[RankedList]:
    """Leave-one-out rankings for every document in the corpus."""
    n = len(corpus)
    if n < 2:
        raise ValueError("corpus must hold at least 2 documents")
    dist = distance_matrix(corpus, allow_zero)
    ids = np.asarray(corpus.ids)
    others = _neighbor_order(dist, ids)
    return [
        RankedList(
            query_id=corpus.ids[i],
            doc_ids=[corpus.ids[j] for j in others[i]],
            distances=dist[i, others[i]],
        )
        for i in range(n)
    ]


def _neighbor_order(dist: np.ndarray, ids: np.ndarray) -> list[np.ndarray]:
    """Per row: indices of all other documents by (distance, id)."""
    n = dist.shape[0]
    out = []
    for i in range(n):
        order = np.lexsort((ids, dist[i]))
        out.append(order[order != i])
    return out


def average_precision(ranking: RankedList, labels: dict[str, str]) -> float | None:
    """Mean of precision at each relevant rank; None without relevant docs."""
    query_label = labels[ranking.query_id]
    rel = np.fromiter(
        (labels[d] == query_label for d in ranking.doc_ids),
        dtype=bool,
        count=len(ranking.doc_ids),
    )
    if not rel.any():
        return None
    hits = np.cumsum(rel)
    ranks = np.arange(1, rel.size + 1)
    return float(np.mean(hits[rel] / ranks[rel]))


def mean_average_precision(
    rankings: list[RankedList],
    labels: dict[str, str],
    skip_unmatched: bool = True,
) -> float:
    """Mean AP over queries.

    Queries with no relevant document are excluded from the mean by
    default (they still appear as distractors in other rankings); with
    ``skip_unmatched=False`` they contribute an AP of 0.
    """
    aps = []
    for ranking in rankings:
        ap = average_precision(ranking, labels)
        if ap is None:
            if not skip_unmatched:
                aps.append(0.0)
        else:
            aps.append(ap)
    if not aps:
        raise ValueError("no query has any relevant document")
    return float(np.mean(np.asarray(aps)))


def top1_accuracy(
    rankings: list[RankedList],
    labels: dict[str, str],
    skip_unmatched: bool = True,
) -> float:
    """Fraction of queries whose closest document shares the writer."""
    hits, total = 0, 0
    for ranking in rankings:
        query_label = labels[ranking.query_id]
        if skip_unmatched and not any(
            labels[d] == query_label for d in ranking.doc_ids
        ):
            continue
        total += 1
        hits += labels[ranking.doc_ids[0]] == query_label
    if total == 0:
        raise ValueError("no query has any relevant document")
    return hits / total


def _l2_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    norms = np.where(norms == 0.0, 1.0, norms)
    return x / norms[:, None]


def _knn_sets(corpus: Corpus, k: int, allow_zero: bool) -> list[set[int]]:
    dist = distance_matrix(corpus, allow_zero)
    ids = np.asarray(corpus.ids)
    others = _neighbor_order(dist, ids)
    return [set(row[:k].tolist()) for row in others]


def krnn_rerank(corpus: Corpus, k: int, allow_zero: bool = False) -> Corpus:
    """Average each descriptor with its reciprocal k nearest neighbors.

    Documents a and b are reciprocal neighbors when each lies in the
    other's k nearest. All means are taken over the original
    descriptors, then L2-normalized.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    x = corpus.vectors
    if k == 0:
        return Corpus(list(corpus.ids), _l2_rows(x), list(corpus.labels))
    knn = _knn_sets(corpus, k, allow_zero)
    new = np.empty_like(x)
    for i in range(len(corpus)):
        members = [i] + sorted(j for j in knn[i] if i in knn[j])
        new[i] = x[members].mean(axis=0)
    return Corpus(list(corpus.ids), _l2_rows(new), list(corpus.labels))


def graph_rerank(
    corpus: Corpus, k1: int = 4, k2: int = 2, iterations: int = 3,
    allow_zero: bool = False,
) -> Corpus:
    """Propagate descriptors over a reciprocal nearest-neighbor graph.

    Each node points at its k1 nearest neighbors, and an edge to
    neighbor j is kept only when the node is itself among j's k2
    nearest. For ``iterations`` rounds every descriptor is replaced,
    synchronously, by the L2-normalized mean of itself and its kept
    neighbors' current descriptors.
    """
    if not 0 <= k2 <= k1:
        raise ValueError("need k1 >= k2 >= 0")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return Corpus(list(corpus.ids), corpus.vectors.copy(), list(corpus.labels))

    knn1 = _knn_sets(corpus, k1, allow_zero)
    knn2 = _knn_sets(corpus, k2, allow_zero)
    kept = [
        [i] + sorted(j for j in knn1[i] if i in knn2[j])
        for i in range(len(corpus))
    ]
    x = corpus.vectors
    for _ in range(iterations):
        x = _l2_rows(np.stack([x[members].mean(axis=0) for members in kept]))
    return Corpus(list(corpus.ids), x, list(corpus.labels))
