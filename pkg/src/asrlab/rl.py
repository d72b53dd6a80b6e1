"""Softmax adjustment policy, REINFORCE and PPO updates, and a bandit testbed."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .encoder import glorot_uniform

POLICY_NAMES = ("V1", "c1", "V2", "c2")


class PolicyError(ValueError):
    pass


@dataclass
class PolicyParams:
    V1: np.ndarray
    c1: np.ndarray
    V2: np.ndarray
    c2: np.ndarray

    @property
    def state_dim(self):
        return self.V1.shape[1]

    @property
    def n_actions(self):
        return self.V2.shape[0]

    def tensors(self):
        return {k: getattr(self, k) for k in POLICY_NAMES}

    def copy(self):
        return PolicyParams(**{k: a.copy() for k, a in self.tensors().items()})

    def add(self, grads, scale):
        return PolicyParams(**{k: getattr(self, k) + scale * grads[k] for k in POLICY_NAMES})


def init_policy(state_dim: int, n_actions: int, hidden: int = 32, seed: int = 0) -> PolicyParams:
    """Glorot hidden layer; zero output layer, so the initial policy is uniform."""
    rng = np.random.default_rng(seed)
    return PolicyParams(
        V1=glorot_uniform(rng, hidden, state_dim),
        c1=np.zeros(hidden),
        V2=np.zeros((n_actions, hidden)),
        c2=np.zeros(n_actions),
    )


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(params: PolicyParams, S):
    S = np.atleast_2d(np.asarray(S, dtype=np.float64))
    if S.shape[1] != params.state_dim:
        raise PolicyError(f"state has dimension {S.shape[1]}, policy expects {params.state_dim}")
    pre = S @ params.V1.T + params.c1
    h = np.maximum(pre, 0.0)
    logits = h @ params.V2.T + params.c2
    return S, pre, h, _softmax(logits)


def policy_forward(params: PolicyParams, s) -> np.ndarray:
    """Action probabilities for one state (1-D) or a batch of states (2-D)."""
    probs = _forward(params, s)[3]
    return probs[0] if np.ndim(s) == 1 else probs


def _backward(params, cache, g_logits):
    S, pre, h, _ = cache
    gV2 = g_logits.T @ h
    gc2 = g_logits.sum(axis=0)
    gpre = (g_logits @ params.V2) * (pre > 0)
    return {"V1": gpre.T @ S, "c1": gpre.sum(axis=0), "V2": gV2, "c2": gc2}


def sample_action(probs, rng):
    """Categorical draw; returns ``(action, log prob of that action)``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise PolicyError("probabilities must be a 1-D vector on the simplex")
    cdf = np.cumsum(p)
    a = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    a = min(a, p.size - 1)
    while p[a] == 0:
        a -= 1
    return a, math.log(p[a])


def discounted_returns(rewards, eta: float) -> list:
    if not 0 < eta <= 1:
        raise PolicyError("discount must lie in (0, 1]")
    out = [0.0] * len(rewards)
    g = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        g = rewards[t] + eta * g
        out[t] = g
    return out


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    logp_old: float | None = None

    def __post_init__(self):
        if self.logp_old is not None and self.logp_old > 0:
            raise PolicyError("log probability cannot be positive")


@dataclass
class TrajectoryBuffer:
    transitions: list = field(default_factory=list)
    eta: float = 0.95

    def append(self, tr: Transition):
        self.transitions.append(tr)

    def __len__(self):
        return len(self.transitions)

    def states(self):
        return np.array([t.state for t in self.transitions], dtype=np.float64)

    def actions(self):
        return np.array([t.action for t in self.transitions], dtype=np.int64)

    def rewards(self):
        return [t.reward for t in self.transitions]

    def relabel(self, old_params: PolicyParams) -> "TrajectoryBuffer":
        """Copy with ``logp_old`` recomputed under ``old_params``."""
        probs = policy_forward(old_params, self.states())
        logp = np.log(probs[np.arange(len(self)), self.actions()])
        trs = [replace(t, logp_old=float(lp)) for t, lp in zip(self.transitions, logp)]
        return TrajectoryBuffer(trs, self.eta)


@dataclass
class PolicyConfig:
    lr: float = 3e-3
    clip_epsilon: float = 0.2
    ppo_epochs: int = 4
    eta: float = 0.95
    baseline: bool = True
    hidden: int = 32
    old_sync_every: int = 1

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1 and not math.isinf(self.clip_epsilon):
            raise PolicyError("clip_epsilon must lie in (0, 1)")
        if self.ppo_epochs < 1:
            raise PolicyError("ppo_epochs must be >= 1")
        if not 0 < self.eta <= 1:
            raise PolicyError("eta must lie in (0, 1]")
        if self.old_sync_every < 1:
            raise PolicyError("old_sync_every must be >= 1")


def advantages(buffer: TrajectoryBuffer, use_baseline: bool = True) -> np.ndarray:
    """Discounted returns minus the running mean of the earlier returns."""
    g = np.array(discounted_returns(buffer.rewards(), buffer.eta), dtype=np.float64)
    if not use_baseline or g.size == 0:
        return g
    prev_mean = np.concatenate([[0.0], np.cumsum(g)[:-1] / np.arange(1, g.size)])
    return g - prev_mean


def reinforce_objective(params, states, actions, adv):
    """Value and gradient of (1/T) sum_t log pi(a_t|s_t) A_t."""
    cache = _forward(params, states)
    probs = cache[3]
    T = actions.size
    rows = np.arange(T)
    value = float(np.sum(np.log(probs[rows, actions]) * adv) / T)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    g_logits = (onehot - probs) * (adv / T)[:, None]
    return value, _backward(params, cache, g_logits)


def ppo_objective(params, states, actions, adv, logp_old, clip_epsilon):
    """Value and gradient of the clipped surrogate (1/T) sum_t min(r A, clip(r) A).

    Where the clipped branch is the smaller one it is constant in theta and
    contributes no gradient. On ties the unclipped branch is used.
    """
    cache = _forward(params, states)
    probs = cache[3]
    T = actions.size
    rows = np.arange(T)
    ratio = np.exp(np.log(probs[rows, actions]) - logp_old)
    clipped = np.clip(ratio, 1 - clip_epsilon, 1 + clip_epsilon)
    unclipped_term, clipped_term = ratio * adv, clipped * adv
    value = float(np.sum(np.minimum(unclipped_term, clipped_term)) / T)
    live = unclipped_term <= clipped_term
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    g_logits = (onehot - probs) * (live * ratio * adv / T)[:, None]
    return value, _backward(params, cache, g_logits), ratio


def _check_finite(grads):
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite policy gradient for {k}")


def reinforce_update(params: PolicyParams, buffer: TrajectoryBuffer, cfg: PolicyConfig) -> PolicyParams:
    if len(buffer) == 0:
        raise PolicyError("empty trajectory buffer")
    adv = advantages(buffer, cfg.baseline)
    _, grads = reinforce_objective(params, buffer.states(), buffer.actions(), adv)
    _check_finite(grads)
    return params.add(grads, cfg.lr)


def ppo_update(params: PolicyParams, old_params: PolicyParams, buffer: TrajectoryBuffer, cfg: PolicyConfig,
               sync: bool = True):
    """Run ``ppo_epochs`` ascent steps on the clipped surrogate.

    Returns ``(new_params, new_old_params)``; with ``sync`` the auxiliary
    policy becomes a copy of the new parameters.
    """
    if len(buffer) == 0:
        raise PolicyError("empty trajectory buffer")
    if any(t.logp_old is None for t in buffer.transitions):
        raise PolicyError("every transition needs logp_old from the auxiliary policy")
    states, actions = buffer.states(), buffer.actions()
    logp_old = np.array([t.logp_old for t in buffer.transitions])
    adv = advantages(buffer, cfg.baseline)
    for _ in range(cfg.ppo_epochs):
        _, grads, _ = ppo_objective(params, states, actions, adv, logp_old, cfg.clip_epsilon)
        _check_finite(grads)
        params = params.add(grads, cfg.lr)
    return params, (params.copy() if sync else old_params)


# --- one-state softmax bandit -------------------------------------------------

def run_softmax_bandit(action_rewards, init_logits, steps: int, lr: float) -> np.ndarray:
    """Exact-gradient softmax policy gradient on a one-state bandit.

    Returns an array of shape ``(steps + 1, A)``: the initial policy followed
    by the policy after every step.
    """
    r = np.asarray(action_rewards, dtype=np.float64)
    theta = np.asarray(init_logits, dtype=np.float64).copy()
    if r.ndim != 1 or r.size < 2 or theta.shape != r.shape:
        raise PolicyError("need equal-length reward and logit vectors with >= 2 actions")
    if steps < 1:
        raise PolicyError("steps must be >= 1")
    traj = np.empty((steps + 1, r.size))
    pi = _softmax(theta)
    traj[0] = pi
    for t in range(1, steps + 1):
        theta = theta + lr * pi * (r - pi @ r)
        pi = _softmax(theta)
        traj[t] = pi
    return traj


def steps_to_majority(trajectory, action: int, threshold: float = 0.5):
    """First step at which ``action`` holds more than ``threshold`` probability, else None."""
    hit = np.flatnonzero(np.asarray(trajectory)[:, action] > threshold)
    return int(hit[0]) if hit.size else None


def skewed_logits(n_actions: int, action: int, prob: float) -> np.ndarray:
    """Logits putting ``prob`` on ``action`` and spreading the rest evenly."""
    logits = np.zeros(n_actions)
    logits[action] = math.log(prob * (n_actions - 1) / (1 - prob))
    return logits
