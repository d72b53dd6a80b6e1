"""Two-layer ReLU embedding network with L2-normalised output.

Forward and backward passes are written out by hand; ``optimizer_step`` is a
bias-corrected Adam update. Parameter objects are treated as immutable values:
every update returns a new ``EncoderParams``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-12
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class StaleCacheError(RuntimeError):
    """Backward called with parameters other than the forward pass used."""


def glorot_uniform(rng, fan_out, fan_in):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


@dataclass
class EncoderParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0

    def __post_init__(self):
        for name in PARAM_NAMES:
            arr = getattr(self, name)
            self.m.setdefault(name, np.zeros_like(arr))
            self.v.setdefault(name, np.zeros_like(arr))

    @property
    def d_in(self):
        return self.W1.shape[1]

    @property
    def d_out(self):
        return self.W2.shape[0]

    def tensors(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self):
        return EncoderParams(
            **{k: a.copy() for k, a in self.tensors().items()},
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
            t=self.t,
        )


def init_encoder(d_in: int, hidden: int = 64, d_out: int = 16, seed: int = 0) -> EncoderParams:
    rng = np.random.default_rng(seed)
    return EncoderParams(
        W1=glorot_uniform(rng, hidden, d_in),
        b1=np.zeros(hidden),
        W2=glorot_uniform(rng, d_out, hidden),
        b2=np.zeros(d_out),
    )


@dataclass
class EmbeddingBatch:
    """Unit-norm embeddings plus what backprop needs from the forward pass."""

    embeddings: np.ndarray
    x: np.ndarray
    pre: np.ndarray
    hidden: np.ndarray
    z: np.ndarray
    norms: np.ndarray
    params: EncoderParams

    def __len__(self):
        return self.embeddings.shape[0]


def embed_forward(params: EncoderParams, X) -> EmbeddingBatch:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.d_in:
        raise ValueError(f"expected input with {params.d_in} columns, got shape {X.shape}")
    pre = X @ params.W1.T + params.b1
    h = np.maximum(pre, 0.0)
    z = h @ params.W2.T + params.b2
    norms = np.sqrt(np.sum(z * z, axis=1))
    emb = z / (norms + NORM_EPS)[:, None]
    return EmbeddingBatch(emb, X, pre, h, z, norms, params)


def embed(params: EncoderParams, X) -> np.ndarray:
    return embed_forward(params, X).embeddings


def embed_backward(batch: EmbeddingBatch, grad_embeddings, params: EncoderParams) -> dict:
    """Gradients of a scalar loss w.r.t. W1, b1, W2, b2.

    ``grad_embeddings`` is dL/d(embeddings). The normalisation Jacobian of
    ``z / (|z| + eps)`` is applied exactly, eps included.
    """
    if batch.params is not params:
        raise StaleCacheError("embedding cache was produced with different parameters")
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if g.shape != batch.embeddings.shape:
        raise ValueError(f"gradient shape {g.shape} != embedding shape {batch.embeddings.shape}")
    n = batch.norms
    denom = n + NORM_EPS
    zg = np.sum(batch.z * g, axis=1)
    safe_n = np.where(n > 0, n, 1.0)
    coef = np.where(n > 0, zg / (denom * denom * safe_n), 0.0)
    gz = g / denom[:, None] - batch.z * coef[:, None]
    gW2 = gz.T @ batch.hidden
    gb2 = gz.sum(axis=0)
    gh = gz @ params.W2
    gpre = gh * (batch.pre > 0)
    gW1 = gpre.T @ batch.x
    gb1 = gpre.sum(axis=0)
    return {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}


def optimizer_step(params: EncoderParams, grads: dict, lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> EncoderParams:
    if not lr > 0:
        raise ValueError("lr must be positive")
    if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
        raise ValueError("beta1 and beta2 must lie in [0, 1)")
    for name in PARAM_NAMES:
        if not np.all(np.isfinite(grads[name])):
            raise FloatingPointError(f"non-finite gradient for {name}")
    t = params.t + 1
    new, m_new, v_new = {}, {}, {}
    for name in PARAM_NAMES:
        g = grads[name]
        m = beta1 * params.m[name] + (1 - beta1) * g
        v = beta2 * params.v[name] + (1 - beta2) * g * g
        m_hat = m / (1 - beta1**t)
        v_hat = v / (1 - beta2**t)
        new[name] = getattr(params, name) - lr * m_hat / (np.sqrt(v_hat) + eps)
        m_new[name], v_new[name] = m, v
    return EncoderParams(**new, m=m_new, v=v_new, t=t)


# Checkpoints are .npz archives: one array per key, shapes stored by numpy.
# Encoder keys: W1 b1 W2 b2, m.<name>, v.<name>, t.


def save_checkpoint(path, tensors: dict):
    with open(path, "wb") as fh:
        np.savez(fh, **{k: np.asarray(v) for k, v in tensors.items()})


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as data:
        return {k: data[k].copy() for k in data.files}


def encoder_state(params: EncoderParams) -> dict:
    out = dict(params.tensors())
    out.update({f"m.{k}": a for k, a in params.m.items()})
    out.update({f"v.{k}": a for k, a in params.v.items()})
    out["t"] = np.array(params.t, dtype=np.int64)
    return out


def encoder_from_state(state: dict) -> EncoderParams:
    return EncoderParams(
        **{k: state[k] for k in PARAM_NAMES},
        m={k: state[f"m.{k}"] for k in PARAM_NAMES},
        v={k: state[f"v.{k}"] for k in PARAM_NAMES},
        t=int(state["t"]),
    )
