"""Negative selection strategies.

The adjustable strategy is a histogram over anchor-negative distance on
``[0, 2]`` (the range of distances between unit vectors). A negative is drawn
by first picking a non-empty bin in proportion to its weight, then a
candidate uniformly inside that bin. Static baselines: uniform random,
semihard, and distance-weighted selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .losses import TripletBatch, distance_matrix

DIST_MAX = 2.0
INIT_FLOOR = 1e-6
ACTION_FLOOR = 1e-9
INV_DENSITY_CAP = 100.0
DISTANCE_CUTOFF = 0.5


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplingDistribution:
    bin_edges: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        edges = np.array(self.bin_edges, dtype=np.float64)
        w = np.array(self.weights, dtype=np.float64)
        if edges.ndim != 1 or w.ndim != 1 or edges.size != w.size + 1:
            raise SamplerError("need B weights and B+1 bin edges")
        if edges[0] != 0.0 or edges[-1] != DIST_MAX or np.any(np.diff(edges) <= 0):
            raise SamplerError("bin edges must increase strictly from 0 to 2")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise SamplerError("weights must lie on the probability simplex")
        edges.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "weights", w)

    @property
    def n_bins(self) -> int:
        return self.weights.size

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    def bin_of(self, d) -> np.ndarray:
        """Bin index per distance; bins are ``[lo, hi)`` except the last, which is closed."""
        idx = np.searchsorted(self.bin_edges, np.asarray(d, dtype=np.float64), side="right") - 1
        return np.clip(idx, 0, self.n_bins - 1)

    def to_json(self) -> dict:
        return {"bin_edges": self.bin_edges.tolist(), "weights": self.weights.tolist()}


def uniform_edges(n_bins: int) -> np.ndarray:
    return np.linspace(0.0, DIST_MAX, n_bins + 1)


def normalized_from_raw(raw, n_bins: int, floor: float) -> SamplingDistribution:
    w = np.maximum(np.asarray(raw, dtype=np.float64), floor)
    return SamplingDistribution(uniform_edges(n_bins), w / w.sum())


# --- distance density on the unit sphere -----------------------------------

def sphere_distance_density(d, dim: int) -> np.ndarray:
    """Density of the distance between two uniform points on the unit sphere in R^dim.

    q(d) = d^(dim-2) (1 - d^2/4)^((dim-3)/2) / (2^(dim-2) B((dim-1)/2, (dim-1)/2)).
    """
    if dim < 3:
        raise SamplerError("sphere distance density needs dim >= 3")
    d = np.asarray(d, dtype=np.float64)
    a = 0.5 * (dim - 1)
    log_norm = (dim - 2) * math.log(2.0) + 2 * math.lgamma(a) - math.lgamma(2 * a)
    inner = np.clip(1.0 - 0.25 * d * d, 0.0, None)
    with np.errstate(divide="ignore"):
        log_q = (dim - 2) * np.log(d) + 0.5 * (dim - 3) * np.log(inner) - log_norm
    return np.exp(log_q)


def inverse_density_weight(d, dim: int, cutoff: float = DISTANCE_CUTOFF,
                           cap: float = INV_DENSITY_CAP) -> np.ndarray:
    """``min(1/q(max(d, cutoff)), cap)``; points where q vanishes get ``cap``."""
    q = sphere_distance_density(np.maximum(np.asarray(d, dtype=np.float64), cutoff), dim)
    with np.errstate(divide="ignore"):
        inv = np.where(q > 0, 1.0 / np.where(q > 0, q, 1.0), np.inf)
    return np.minimum(inv, cap)


# --- initial distributions ---------------------------------------------------

INIT_DEFAULTS = {
    "uniform_low": {"mu": 0.5, "sigma": 0.2},
    "uniform_high": {"mu": 1.5, "sigma": 0.2},
    "distance": {"limit": 0.5},
    "random": {},
    "normal_high": {"mu": 1.6, "sigma": 0.04},
    "normal_low": {"mu": 0.5, "sigma": 0.05},
}
INIT_KINDS = tuple(INIT_DEFAULTS)


@dataclass(frozen=True)
class InitialDistributionSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in INIT_DEFAULTS:
            raise SamplerError(f"unknown initial distribution {self.kind!r}; choose from {INIT_KINDS}")
        merged = dict(INIT_DEFAULTS[self.kind])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise SamplerError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged.update(self.params)
        object.__setattr__(self, "params", merged)


def init_distribution(spec: InitialDistributionSpec, n_bins: int = 10, dim: int = 16) -> SamplingDistribution:
    """Evaluate the chosen density at bin centres, floor at 1e-6, normalise.

    ``uniform`` kinds read (mu, sigma) as a window ``[mu - sigma, mu + sigma]``.
    ``dim`` is the embedding dimension used by the ``distance`` kind.
    """
    if n_bins < 2:
        raise SamplerError("need at least two bins")
    centers = 0.5 * (uniform_edges(n_bins)[:-1] + uniform_edges(n_bins)[1:])
    p = spec.params
    if spec.kind.startswith("uniform"):
        lo, hi = p["mu"] - p["sigma"], p["mu"] + p["sigma"]
        tol = 1e-9
        raw = ((centers >= lo - tol) & (centers <= hi + tol)).astype(np.float64)
    elif spec.kind.startswith("normal"):
        z = (centers - p["mu"]) / p["sigma"]
        raw = np.exp(-0.5 * z * z) / (p["sigma"] * math.sqrt(2 * math.pi))
    elif spec.kind == "random":
        raw = np.random.default_rng(spec.seed).random(n_bins)
    else:
        raw = np.where(centers >= p["limit"],
                       inverse_density_weight(centers, dim, cutoff=p["limit"]), 0.0)
    return normalized_from_raw(raw, n_bins, INIT_FLOOR)


# --- actions ------------------------------------------------------------------

@dataclass(frozen=True)
class ActionId:
    """0 is the no-op; ``1 + 2b`` scales bin b up, ``2 + 2b`` scales it down."""

    code: int

    @staticmethod
    def n_actions(n_bins: int) -> int:
        return 2 * n_bins + 1

    @classmethod
    def encode(cls, bin_index: int | None = None, up: bool = True) -> "ActionId":
        if bin_index is None:
            return cls(0)
        return cls(1 + 2 * bin_index + (0 if up else 1))

    def decode(self):
        """``None`` for the no-op, else ``(bin, "up" | "down")``."""
        if self.code == 0:
            return None
        b, r = divmod(self.code - 1, 2)
        return b, ("up" if r == 0 else "down")


def apply_action(dist: SamplingDistribution, action, c: float = 2.0) -> SamplingDistribution:
    code = action.code if isinstance(action, ActionId) else int(action)
    if not c > 1:
        raise SamplerError("multiplier c must exceed 1")
    if not 0 <= code <= 2 * dist.n_bins:
        raise SamplerError(f"action code {code} outside [0, {2 * dist.n_bins}]")
    if code == 0:
        return dist
    b, direction = ActionId(code).decode()
    w = dist.weights.copy()
    w[b] = w[b] * c if direction == "up" else w[b] / c
    w = np.maximum(w, ACTION_FLOOR)
    return SamplingDistribution(dist.bin_edges, w / w.sum())


# --- single-anchor selection ---------------------------------------------------

def _candidate_distances(emb, anchor, candidates):
    x = np.asarray(getattr(emb, "embeddings", emb), dtype=np.float64)
    diff = x[candidates] - x[anchor]
    return np.sqrt(np.sum(diff * diff, axis=1))


def _check_candidates(candidates):
    cand = np.asarray(candidates, dtype=np.int64)
    if cand.size == 0:
        raise SamplerError("empty candidate list")
    return cand


def sample_negative(dist: SamplingDistribution, anchor: int, candidates, emb, rng) -> int:
    cand = _check_candidates(candidates)
    d = _candidate_distances(emb, anchor, cand)
    u_bin, u_pick = rng.random(1), rng.random(1)
    j = kernels.select_binned(dist.bin_of(d)[None, :], np.ones((1, cand.size)), dist.weights, u_bin, u_pick)
    return int(cand[j[0]])


def semihard_negative(a: int, p: int, candidates, emb, gamma: float, rng) -> int:
    cand = _check_candidates(candidates)
    d_an = _candidate_distances(emb, a, cand)
    d_ap = _candidate_distances(emb, a, [p])
    j = kernels.select_semihard(d_an[None, :], d_ap, np.ones((1, cand.size)), gamma, rng.random(1))
    return int(cand[j[0]])


def distance_weighted_negative(a: int, candidates, emb, rng, dim: int | None = None) -> int:
    cand = _check_candidates(candidates)
    x = np.asarray(getattr(emb, "embeddings", emb))
    d = _candidate_distances(emb, a, cand)
    w = inverse_density_weight(d, dim or x.shape[1])
    j = kernels.select_weighted(w[None, :], np.ones((1, cand.size)), rng.random(1))
    return int(cand[j[0]])


# --- batched triplet assembly -------------------------------------------------

STRATEGIES = ("random", "semihard", "distance", "binned")


def build_triplets(batch_indices, labels, strategy: str, emb, rng, dist: SamplingDistribution | None = None,
                   gamma: float = 0.2, dim: int | None = None) -> TripletBatch:
    """One triplet per eligible anchor of a mini-batch.

    ``batch_indices`` index rows of ``emb`` and ``labels``. An anchor is
    eligible when the batch holds another member of its class and at least
    one member of another class. Positives are uniform among same-class
    members; negatives come from ``strategy``. Returned indices refer to rows
    of ``emb``.
    """
    if strategy not in STRATEGIES:
        raise SamplerError(f"unknown strategy {strategy!r}")
    if strategy == "binned" and dist is None:
        raise SamplerError("binned strategy needs a SamplingDistribution")
    idx = np.asarray(batch_indices, dtype=np.int64)
    lab = np.asarray(labels)[idx]
    x = np.asarray(getattr(emb, "embeddings", emb), dtype=np.float64)[idx]
    same = lab[:, None] == lab[None, :]
    pos_mask = same & ~np.eye(idx.size, dtype=bool)
    neg_mask = ~same
    eligible = np.flatnonzero(pos_mask.any(axis=1) & neg_mask.any(axis=1))
    if eligible.size == 0:
        raise SamplerError("batch has no anchor with both a positive and a negative")
    pos_mask, neg_mask = pos_mask[eligible], neg_mask[eligible]
    n = eligible.size
    u_pos = rng.random(n)
    u_neg = rng.random(n)
    pos = kernels.select_weighted(pos_mask.astype(np.float64), pos_mask, u_pos)
    if strategy == "random":
        neg = kernels.select_weighted(neg_mask.astype(np.float64), neg_mask, u_neg)
    else:
        dmat = distance_matrix(x)[eligible]
        if strategy == "semihard":
            d_ap = dmat[np.arange(n), pos]
            neg = kernels.select_semihard(dmat, d_ap, neg_mask, gamma, u_neg)
        elif strategy == "distance":
            w = inverse_density_weight(dmat, dim or x.shape[1])
            neg = kernels.select_weighted(w, neg_mask, u_neg)
        else:
            u_pick = rng.random(n)
            neg = kernels.select_binned(dist.bin_of(dmat), neg_mask, dist.weights, u_neg, u_pick)
    return TripletBatch(idx[eligible], idx[pos], idx[neg])
