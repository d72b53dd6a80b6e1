"""Retrieval and clustering quality of an embedding."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .losses import distance_matrix

DEFAULT_KS = (1, 2, 4, 8)
DEFAULT_METRIC_WEIGHTS = {"R@1": 0.5, "nmi": 0.5}


class MetricError(ValueError):
    pass


def recall_at_k(emb, labels, ks=DEFAULT_KS) -> dict:
    """Fraction of queries with a same-label row among their k nearest others."""
    x = np.asarray(getattr(emb, "embeddings", emb), dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = x.shape[0]
    ks = [int(k) for k in ks]
    if labels.shape[0] != n:
        raise MetricError("labels and embeddings differ in length")
    if not ks or min(ks) < 1 or max(ks) >= n:
        raise MetricError(f"every k must satisfy 1 <= k < N (N={n}), got {ks}")
    hits = kernels.knn_hit_counts(distance_matrix(x), labels, np.array(ks))
    return {k: int(h) / n for k, h in zip(ks, hits)}


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    inertia: float
    centroids: np.ndarray
    history: list = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(x, c):
    diff = x[:, None, :] - c[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            cdf = np.cumsum(closest)
            nxt = int(np.searchsorted(cdf, rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
            while closest[nxt] == 0:  # guard against landing on a zero-mass point
                nxt -= 1
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            nxt = int(free[rng.integers(free.size)])
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dists(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def kmeans(emb, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> ClusterAssignment:
    """k-means++ seeding followed by Lloyd iterations.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``
    iterations. A cluster that empties is re-seeded with the point farthest
    from its current centroid.
    """
    x = np.asarray(getattr(emb, "embeddings", emb), dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise MetricError(f"k must satisfy 1 <= k <= N (N={n}), got {k}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(x, k, rng)
    history = []
    assign = None
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centroids)
        assign = np.argmin(d2, axis=1)
        point_d2 = d2[np.arange(n), assign]
        history.append(float(point_d2.sum()))
        new = centroids.copy()
        taken = set()
        for c in range(k):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
            else:
                order = np.argsort(-point_d2, kind="stable")
                far = next(int(i) for i in order if int(i) not in taken)
                taken.add(far)
                new[c] = x[far]
        shift = np.sqrt(np.sum((new - centroids) ** 2, axis=1)).max()
        centroids = new
        if shift < tol:
            break
    d2 = _sq_dists(x, centroids)
    assign = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    return ClusterAssignment(assign.astype(np.int64), inertia, centroids, history, it)


def _contingency(a, b):
    a = np.asarray(getattr(a, "labels", a))
    b = np.asarray(b)
    if a.shape != b.shape:
        raise MetricError("cluster assignment and labels differ in length")
    return Counter(zip(a.tolist(), b.tolist())), Counter(a.tolist()), Counter(b.tolist()), a.size


def _entropy(counts, n):
    return math.fsum(-(c / n) * math.log(c / n) for c in counts.values())


def nmi(assign, labels) -> float:
    """Mutual information normalised by the arithmetic mean of the two entropies."""
    joint, ca, cb, n = _contingency(assign, labels)
    if n == 0:
        raise MetricError("empty input")
    ha, hb = _entropy(ca, n), _entropy(cb, n)
    if ha == 0.0 and hb == 0.0:
        return 1.0
    if ha == 0.0 or hb == 0.0:
        return 0.0
    mi = math.fsum((c / n) * math.log(c * n / (ca[i] * cb[j])) for (i, j), c in joint.items())
    return min(1.0, max(0.0, 2.0 * mi / (ha + hb)))


def _pairs(c):
    return c * (c - 1) // 2


def f1_from_counts(tp: int, pred_pos: int, actual_pos: int) -> float:
    """2PR/(P+R) written as 2tp/(pred+actual): one rounding, exact in the counts."""
    if tp == 0:
        return 0.0
    return 2 * tp / (pred_pos + actual_pos)


def pairwise_f1(assign, labels) -> float:
    """F1 over unordered pairs: same cluster predicts same label."""
    joint, ca, cb, n = _contingency(assign, labels)
    if n < 2:
        raise MetricError("pairwise F1 needs at least two points")
    tp = sum(_pairs(c) for c in joint.values())
    return f1_from_counts(tp, sum(_pairs(c) for c in ca.values()), sum(_pairs(c) for c in cb.values()))


@dataclass
class MetricReport:
    recall: dict
    nmi: float
    f1: float
    weighted: float = float("nan")

    def values(self) -> dict:
        out = {f"R@{k}": v for k, v in sorted(self.recall.items())}
        out["nmi"] = self.nmi
        out["f1"] = self.f1
        return out

    def to_json(self) -> dict:
        out = self.values()
        out["weighted"] = self.weighted
        return out


def weighted_metric(report: MetricReport, weights: dict = DEFAULT_METRIC_WEIGHTS) -> float:
    vals = report.values()
    if any(w < 0 for w in weights.values()):
        raise MetricError("metric weights must be non-negative")
    if abs(math.fsum(weights.values()) - 1.0) > 1e-9:
        raise MetricError(f"metric weights must sum to 1, got {math.fsum(weights.values())}")
    unknown = set(weights) - set(vals)
    if unknown:
        raise MetricError(f"unknown metric names {sorted(unknown)}; have {sorted(vals)}")
    return math.fsum(w * vals[name] for name, w in weights.items())


def evaluate(emb, labels, ks=DEFAULT_KS, seed: int = 0, weights: dict = DEFAULT_METRIC_WEIGHTS) -> MetricReport:
    """Recall@k, k-means NMI and pairwise F1 with k = number of distinct labels."""
    x = np.asarray(getattr(emb, "embeddings", emb), dtype=np.float64)
    labels = np.asarray(labels)
    ks = [k for k in ks if k < x.shape[0]]
    recall = recall_at_k(x, labels, ks)
    clusters = kmeans(x, int(np.unique(labels).size), seed=seed)
    report = MetricReport(recall, nmi(clusters, labels), pairwise_f1(clusters, labels))
    report.weighted = weighted_metric(report, weights)
    return report
