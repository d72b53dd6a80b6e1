"""Contrastive, triplet and margin losses with exact embedding gradients.

All losses work on Euclidean distances between rows of an embedding matrix.
At a zero distance, and at a hinge kink, the subgradient used is zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class LossError(ValueError):
    pass


def _matrix(emb):
    return np.asarray(getattr(emb, "embeddings", emb), dtype=np.float64)


def pairwise_distance(emb, i: int, j: int) -> float:
    x = _matrix(emb)
    return float(np.sqrt(np.sum((x[i] - x[j]) ** 2)))


def distance_matrix(emb) -> np.ndarray:
    """All-pairs Euclidean distances; exactly symmetric with a zero diagonal."""
    x = _matrix(emb)
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


@dataclass(frozen=True)
class PairBatch:
    i: np.ndarray
    j: np.ndarray
    same: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        same = np.asarray(self.same, dtype=bool)
        if not (i.shape == j.shape == same.shape) or i.ndim != 1:
            raise LossError("pair arrays must be 1-D and of equal length")
        if np.any(i == j):
            raise LossError("a pair must join two distinct rows")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "same", same)

    @classmethod
    def from_list(cls, pairs):
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, bool))
        i, j, s = zip(*pairs)
        return cls(np.array(i), np.array(j), np.array(s))

    def __len__(self):
        return self.i.shape[0]


@dataclass(frozen=True)
class TripletBatch:
    a: np.ndarray
    p: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        a, p, n = (np.asarray(v, dtype=np.int64) for v in (self.a, self.p, self.n))
        if not (a.shape == p.shape == n.shape) or a.ndim != 1:
            raise LossError("triplet arrays must be 1-D and of equal length")
        if np.any(a == p):
            raise LossError("anchor and positive must differ")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "n", n)

    @classmethod
    def from_list(cls, triplets):
        triplets = list(triplets)
        if not triplets:
            z = np.zeros(0, np.int64)
            return cls(z, z, z)
        a, p, n = zip(*triplets)
        return cls(np.array(a), np.array(p), np.array(n))

    def check_labels(self, labels):
        labels = np.asarray(labels)
        ok = (labels[self.a] == labels[self.p]) & (labels[self.a] != labels[self.n])
        if not np.all(ok):
            raise LossError("triplets must satisfy label(a) == label(p) != label(n)")

    def as_pairs(self) -> PairBatch:
        """Anchor-positive and anchor-negative pairs, interleaved per triplet."""
        k = len(self)
        i = np.repeat(self.a, 2)
        j = np.empty(2 * k, dtype=np.int64)
        j[0::2], j[1::2] = self.p, self.n
        same = np.tile([True, False], k)
        return PairBatch(i, j, same)

    def __len__(self):
        return self.a.shape[0]


@dataclass
class MarginState:
    beta: float = 0.6
    beta_lr: float = 5e-4

    def __post_init__(self):
        if not self.beta > 0:
            raise LossError("beta must be positive")


BETA_FLOOR = 1e-3


def update_beta(state: MarginState, grad_beta: float) -> MarginState:
    """Plain gradient descent on beta, clamped to stay positive."""
    return MarginState(max(BETA_FLOOR, state.beta - state.beta_lr * grad_beta), state.beta_lr)


@dataclass
class LossReport:
    value: float
    grad_embeddings: np.ndarray
    grad_beta: float = 0.0
    active_count: int = 0


def _dist_and_unit(x, i, j):
    """Distances for index pairs and the unit direction (x_i - x_j)/d, zero at d=0."""
    diff = x[i] - x[j]
    d = np.sqrt(np.sum(diff * diff, axis=1))
    safe = np.where(d > 0, d, 1.0)
    unit = np.where((d > 0)[:, None], diff / safe[:, None], 0.0)
    return d, unit


def _scatter(grad, i, j, unit, coef):
    # d(d_ij)/dx_i = unit, d(d_ij)/dx_j = -unit
    contrib = unit * coef[:, None]
    np.add.at(grad, i, contrib)
    np.add.at(grad, j, -contrib)


def contrastive_loss(emb, pairs: PairBatch, gamma: float = 1.0) -> LossReport:
    """Mean over pairs of d for same-class pairs and [gamma - d]+ otherwise."""
    if len(pairs) == 0:
        raise LossError("empty pair list")
    if not gamma > 0:
        raise LossError("gamma must be positive")
    x = _matrix(emb)
    d, unit = _dist_and_unit(x, pairs.i, pairs.j)
    hinge = gamma - d
    terms = np.where(pairs.same, d, np.maximum(hinge, 0.0))
    b = len(pairs)
    active = np.where(pairs.same, d > 0, hinge > 0)
    coef = np.where(pairs.same, 1.0, -1.0) * active / b
    grad = np.zeros_like(x)
    _scatter(grad, pairs.i, pairs.j, unit, coef)
    return LossReport(float(terms.sum() / b), grad, 0.0, int(active.sum()))


def triplet_loss(emb, triplets: TripletBatch, gamma: float = 0.2) -> LossReport:
    if len(triplets) == 0:
        raise LossError("empty triplet list")
    if not gamma > 0:
        raise LossError("gamma must be positive")
    x = _matrix(emb)
    d_ap, u_ap = _dist_and_unit(x, triplets.a, triplets.p)
    d_an, u_an = _dist_and_unit(x, triplets.a, triplets.n)
    raw = d_ap - d_an + gamma
    active = raw > 0
    b = len(triplets)
    coef = active / b
    grad = np.zeros_like(x)
    _scatter(grad, triplets.a, triplets.p, u_ap, coef)
    _scatter(grad, triplets.a, triplets.n, u_an, -coef)
    return LossReport(float(np.maximum(raw, 0.0).sum() / b), grad, 0.0, int(active.sum()))


def margin_loss(emb, pairs: PairBatch, gamma: float = 0.2, state: MarginState | None = None,
                reduction: str = "sum") -> LossReport:
    """Hinged margin loss with learnable boundary beta.

    Same-class pairs pay ``[gamma + (d - beta)]+``, different-class pairs pay
    ``[gamma - (d - beta)]+``. ``reduction`` is ``"sum"`` (default) or ``"mean"``.
    """
    if len(pairs) == 0:
        raise LossError("empty pair list")
    if not gamma > 0:
        raise LossError("gamma must be positive")
    if reduction not in ("sum", "mean"):
        raise LossError(f"unknown reduction {reduction!r}")
    state = state or MarginState()
    x = _matrix(emb)
    d, unit = _dist_and_unit(x, pairs.i, pairs.j)
    sign = np.where(pairs.same, 1.0, -1.0)
    raw = gamma + sign * (d - state.beta)
    active = raw > 0
    scale = 1.0 / len(pairs) if reduction == "mean" else 1.0
    grad = np.zeros_like(x)
    _scatter(grad, pairs.i, pairs.j, unit, sign * active * scale)
    grad_beta = float(-(sign * active).sum() * scale)
    value = float(np.maximum(raw, 0.0).sum() * scale)
    return LossReport(value, grad, grad_beta, int(active.sum()))
