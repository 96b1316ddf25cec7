"""Retrieval metrics: P@1, P@R and MAP@R in the single-pool setting.

Every sample is a query; its references are all other samples.  R is
per-query: the number of true (same-class) references.  Distance ties break
by ascending sample index for determinism.  Queries whose class has a single
sample have no true reference; they are skipped and counted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .losses import pairwise_distances


@dataclass(frozen=True)
class RetrievalReport:
    p_at_1: float
    p_at_r: float
    map_at_r: float
    n_queries: int
    n_skipped: int


def _ranked_flags(embeddings, labels):
    """Per query: sorted same-class flags of all other samples (ties by
    index), plus R = number of true references.  Yields (flags, R)."""
    e = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if e.ndim != 2 or e.shape[0] != y.size:
        raise DataFormatError(
            f"metrics: embeddings {e.shape} and labels ({y.size},) do not line up"
        )
    if e.shape[0] < 2:
        raise DataFormatError("metrics: need at least 2 samples")
    D = pairwise_distances(e)
    n = e.shape[0]
    counts = {c: int((y == c).sum()) for c in np.unique(y).tolist()}
    for i in range(n):
        R = counts[y[i].item() if hasattr(y[i], "item") else y[i]] - 1
        if R < 1:
            yield None, 0
            continue
        others = np.concatenate([np.arange(i), np.arange(i + 1, n)])
        order = others[np.lexsort((others, D[i, others]))]
        yield (y[order] == y[i]), R


def evaluate(embeddings, labels) -> RetrievalReport:
    p1_hits = 0
    pr_sum = 0.0
    map_sum = 0.0
    n_q = 0
    n_skip = 0
    for flags, R in _ranked_flags(embeddings, labels):
        if flags is None:
            n_skip += 1
            continue
        n_q += 1
        p1_hits += int(flags[0])
        top = flags[:R]
        pr_sum += top.sum() / R
        correct = 0
        ap = 0.0
        for k in range(R):
            if top[k]:
                correct += 1
                ap += correct / (k + 1)
        map_sum += ap / R
    if n_q == 0:
        raise DataFormatError("metrics: every query was skipped (all classes singletons)")
    return RetrievalReport(p_at_1=p1_hits / n_q, p_at_r=pr_sum / n_q,
                           map_at_r=map_sum / n_q, n_queries=n_q, n_skipped=n_skip)


def precision_at_1(embeddings, labels) -> float:
    """Fraction of queries whose nearest reference shares the class."""
    return evaluate(embeddings, labels).p_at_1


def map_at_r(embeddings, labels) -> tuple[float, float]:
    """Returns (MAP@R, P@R) averaged over queries."""
    rep = evaluate(embeddings, labels)
    return rep.map_at_r, rep.p_at_r
