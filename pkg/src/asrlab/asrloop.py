"""One training episode: encoder updates interleaved with sampling-policy steps.

Each RL step trains the encoder for ``inner_iters`` mini-batches, evaluates
on the validation split, turns the change in the weighted validation metric
into a reward, updates the policy, and lets it adjust the negative-sampling
histogram. One RL step is also one "epoch" of the run.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import encoder as enc
from .datasets import LabeledDataset, SplitSpec, gen_gaussian_blobs, split_by_class_half, split_train_val
from .losses import MarginState, contrastive_loss, margin_loss, triplet_loss, update_beta
from .metrics import DEFAULT_KS, DEFAULT_METRIC_WEIGHTS, evaluate
from .rl import (PolicyConfig, Transition, TrajectoryBuffer, init_policy, policy_forward, ppo_update,
                 reinforce_update, sample_action)
from .samplers import (INIT_KINDS, ActionId, InitialDistributionSpec, apply_action, build_triplets,
                       init_distribution)

log = logging.getLogger(__name__)

LOSSES = ("contrastive", "triplet", "margin")
SAMPLERS = ("random", "semihard", "distance", "asr_reinforce", "asr_ppo")
DEFAULT_GAMMA = {"contrastive": 1.0, "triplet": 0.2, "margin": 0.2}
# metric values are snapped to this grid so rewards telescope exactly in floating point
METRIC_QUANTUM = 2.0**-32


class ConfigError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class AsrConfig:
    loss: str = "triplet"
    sampler: str = "asr_ppo"
    init: InitialDistributionSpec = field(default_factory=lambda: InitialDistributionSpec("normal_low"))
    epochs: int = 40
    inner_iters: int = 20
    batch_size: int = 32
    batch_classes: int = 4
    metric_weights: dict = field(default_factory=lambda: dict(DEFAULT_METRIC_WEIGHTS))
    n_bins: int = 10
    multiplier: float = 2.0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    state_mode: str = "augmented"
    hidden: int = 64
    d_out: int = 16
    lr: float = 1e-3
    gamma: float | None = None
    beta: float = 0.6
    beta_lr: float = 5e-4
    margin_reduction: str = "sum"
    eval_ks: tuple = DEFAULT_KS
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.sampler not in SAMPLERS:
            raise ConfigError(f"sampler must be one of {SAMPLERS}, got {self.sampler!r}")
        if self.inner_iters < 1:
            raise ConfigError("inner_iters must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_classes < 2 or self.batch_size < 2 * self.batch_classes:
            raise ConfigError("need batch_classes >= 2 and at least two members per class")
        if self.state_mode not in ("augmented", "metric"):
            raise ConfigError("state_mode must be 'augmented' or 'metric'")
        if self.gamma is None:
            self.gamma = DEFAULT_GAMMA[self.loss]
        self.eval_ks = tuple(self.eval_ks)

    @property
    def uses_policy(self) -> bool:
        return self.sampler.startswith("asr_")

    @property
    def state_dim(self) -> int:
        return 1 if self.state_mode == "metric" else self.n_bins + 2

    def to_json(self) -> dict:
        out = asdict(self)
        out["init"] = {"kind": self.init.kind, "params": dict(self.init.params), "seed": self.init.seed}
        out["eval_ks"] = list(self.eval_ks)
        return out


@dataclass
class SeedStreams:
    encoder: int
    train: np.random.Generator
    policy: int
    actions: np.random.Generator
    eval: int


def seed_streams(seed: int) -> SeedStreams:
    """Independent streams so that enabling the policy never perturbs training draws."""
    ss = np.random.SeedSequence(seed)
    enc_ss, train_ss, pol_ss, act_ss, eval_ss = ss.spawn(5)
    return SeedStreams(
        encoder=int(enc_ss.generate_state(1)[0]),
        train=np.random.default_rng(train_ss),
        policy=int(pol_ss.generate_state(1)[0]),
        actions=np.random.default_rng(act_ss),
        eval=int(eval_ss.generate_state(1)[0]),
    )


def class_balanced_batch(labels, n_classes: int, per_class: int, rng) -> np.ndarray:
    """Indices of ``n_classes`` random classes with ``per_class`` members each."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    chosen = rng.choice(classes, size=min(n_classes, classes.size), replace=False)
    out = []
    for c in np.sort(chosen):
        members = np.flatnonzero(labels == c)
        out.append(rng.choice(members, size=per_class, replace=members.size < per_class))
    return np.concatenate(out)


def _strategy(sampler: str) -> str:
    return "binned" if sampler.startswith("asr_") else sampler


def train_steps(params, margin_state, train: LabeledDataset, cfg: AsrConfig, rng, dist, n_steps: int):
    """``n_steps`` Adam updates of the encoder; returns (params, margin_state, mean loss)."""
    n_cls = min(cfg.batch_classes, train.num_classes)
    per_class = cfg.batch_size // n_cls
    strategy = _strategy(cfg.sampler)
    total = 0.0
    for _ in range(n_steps):
        idx = class_balanced_batch(train.labels, n_cls, per_class, rng)
        batch = enc.embed_forward(params, train.features[idx])
        labels = train.labels[idx]
        triplets = build_triplets(np.arange(idx.size), labels, strategy, batch.embeddings, rng,
                                  dist=dist, gamma=cfg.gamma, dim=cfg.d_out)
        if cfg.loss == "triplet":
            rep = triplet_loss(batch.embeddings, triplets, cfg.gamma)
        elif cfg.loss == "contrastive":
            rep = contrastive_loss(batch.embeddings, triplets.as_pairs(), cfg.gamma)
        else:
            rep = margin_loss(batch.embeddings, triplets.as_pairs(), cfg.gamma, margin_state,
                              cfg.margin_reduction)
        if not math.isfinite(rep.value):
            raise TrainingDivergedError(f"non-finite loss {rep.value} at optimizer step {params.t + 1}")
        grads = enc.embed_backward(batch, rep.grad_embeddings, params)
        params = enc.optimizer_step(params, grads, lr=cfg.lr)
        if cfg.loss == "margin":
            margin_state = update_beta(margin_state, rep.grad_beta)
        total += rep.value
    return params, margin_state, total / n_steps


def _quantize(x: float) -> float:
    return round(x / METRIC_QUANTUM) * METRIC_QUANTUM


def state_vector(cfg: AsrConfig, metric: float, dist, progress: float) -> np.ndarray:
    if cfg.state_mode == "metric":
        return np.array([metric])
    return np.concatenate([[metric], dist.weights, [progress]])


@dataclass
class RunLog:
    config: dict
    seed: int
    initial: dict
    records: list
    test: dict
    encoder: enc.EncoderParams | None = None
    policy: object = None

    @property
    def val_trajectory(self) -> list:
        """Weighted validation metric before training and after every epoch."""
        return [self.initial["weighted"]] + [r["metrics"]["weighted"] for r in self.records]

    @property
    def epoch_trajectory(self) -> list:
        """Weighted validation metric after each epoch (no pre-training point)."""
        return self.val_trajectory[1:]

    def metric_trajectory(self, name: str) -> list:
        return [self.initial[name]] + [r["metrics"][name] for r in self.records]

    def best_epoch(self, name: str = "weighted") -> int:
        """1-based epoch with the highest validation value (earliest on ties)."""
        traj = self.metric_trajectory(name)[1:]
        return int(np.argmax(traj)) + 1

    def rewards(self) -> list:
        return [r["reward"] for r in self.records]

    def jsonl_lines(self) -> list:
        return [json.dumps(r, sort_keys=True) for r in self.records]

    def summary(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "initial": self.initial,
            "test": self.test,
            "best_epoch": {k: self.best_epoch(k) for k in self.initial},
            "n_records": len(self.records),
        }


def run_episode(cfg: AsrConfig, train: LabeledDataset, val: LabeledDataset, test: LabeledDataset) -> RunLog:
    for name, ds in (("train", train), ("val", val), ("test", test)):
        if len(ds) == 0:
            raise ConfigError(f"{name} split is empty")
    streams = seed_streams(cfg.seed)
    params = enc.init_encoder(train.dim, cfg.hidden, cfg.d_out, seed=streams.encoder)
    margin_state = MarginState(cfg.beta, cfg.beta_lr)

    def score(ds):
        return evaluate(enc.embed(params, ds.features), ds.labels, cfg.eval_ks, streams.eval, cfg.metric_weights)

    dist = init_distribution(cfg.init, cfg.n_bins, cfg.d_out)
    report = score(val)
    m_prev = _quantize(report.weighted)
    report.weighted = m_prev
    initial = report.to_json()

    policy = old_policy = None
    buffer = TrajectoryBuffer(eta=cfg.policy.eta)
    action = logp = None
    s_prev = state_vector(cfg, m_prev, dist, 0.0)
    if cfg.uses_policy:
        policy = init_policy(cfg.state_dim, ActionId.n_actions(cfg.n_bins), cfg.policy.hidden, streams.policy)
        old_policy = policy.copy()
        action, logp = sample_action(policy_forward(policy, s_prev), streams.actions)
        dist = apply_action(dist, action, cfg.multiplier)

    records = []
    n_updates = 0
    for t in range(1, cfg.epochs + 1):
        params, margin_state, loss_mean = train_steps(params, margin_state, train, cfg, streams.train, dist,
                                                      cfg.inner_iters)
        report = score(val)
        m_t = _quantize(report.weighted)
        report.weighted = m_t
        reward = m_t - m_prev
        taken, taken_logp = action, logp
        s_t = state_vector(cfg, m_t, dist, t / cfg.epochs)
        if cfg.uses_policy:
            buffer.append(Transition(s_prev, taken, reward, taken_logp))
            if cfg.sampler == "asr_ppo":
                n_updates += 1
                sync = n_updates % cfg.policy.old_sync_every == 0
                policy, old_policy = ppo_update(policy, old_policy, buffer.relabel(old_policy), cfg.policy, sync)
            else:
                policy = reinforce_update(policy, buffer, cfg.policy)
            if t < cfg.epochs:
                action, logp = sample_action(policy_forward(policy, s_t), streams.actions)
                dist = apply_action(dist, action, cfg.multiplier)
            else:
                action = logp = None
        records.append({
            "step": t,
            "metrics": report.to_json(),
            "state": [float(v) for v in s_t],
            "action": None if action is None else int(action),
            "taken_action": None if taken is None else int(taken),
            "reward": reward,
            "distribution": dist.to_json(),
            "loss": loss_mean,
            "beta": margin_state.beta,
        })
        m_prev, s_prev = m_t, s_t
        log.debug("epoch %d: val %.4f reward %+.4f", t, m_t, reward)

    test_report = score(test)
    return RunLog(cfg.to_json(), cfg.seed, initial, records, test_report.to_json(), params, policy)


# --- gravity well ------------------------------------------------------------

def detect_gravity_well(trajectory, delta: float):
    """``(dip_index, depth)`` if the curve sinks below its start by more than
    ``delta`` and later climbs back more than ``delta`` above the minimum."""
    traj = np.asarray(trajectory, dtype=np.float64)
    if traj.size < 3:
        raise ValueError("trajectory needs at least three points")
    if not delta > 0:
        raise ValueError("delta must be positive")
    t_min = int(np.argmin(traj))
    low = traj[t_min]
    if not low < traj[0] - delta:
        return None
    after = traj[t_min + 1:]
    if after.size == 0 or not after.max() > low + delta:
        return None
    return t_min, float(traj[0] - low)


def ablate_init(cfg: AsrConfig, seeds, datasets, delta: float, kinds=INIT_KINDS, workers: int | None = None) -> dict:
    """Run every initial distribution over shared seeds and detect dips.

    Returns ``{kind: {"runs": {seed: RunLog}, "dips": {seed: (index, depth) | None},
    "dip_rate": float}}``; dip indices are 0-based positions in the per-epoch
    trajectory.
    """
    cfgs = {kind: replace(cfg, init=InitialDistributionSpec(kind, seed=cfg.init.seed)) for kind in kinds}
    results = _run_all(cfgs, list(seeds), datasets, workers)
    out = {}
    for kind in kinds:
        runs = {seed: results[(kind, seed)] for seed in seeds}
        dips = {seed: detect_gravity_well(run.epoch_trajectory, delta) for seed, run in runs.items()}
        rate = sum(d is not None for d in dips.values()) / len(dips)
        out[kind] = {"runs": runs, "dips": dips, "dip_rate": rate}
    return out


# --- benchmark data and strategy comparison ----------------------------------

@dataclass(frozen=True)
class BlobBenchmark:
    """Synthetic stand-in for an image retrieval benchmark.

    Classes are split in halves (train / held-out test); 15% of the training
    rows form the validation set.
    """

    num_classes: int = 8
    per_class: int = 60
    dim: int = 20
    spread: float = 1.25
    val_fraction: float = 0.15

    def make(self, seed: int):
        ds = gen_gaussian_blobs(self.num_classes, self.per_class, self.dim, self.spread, seed)
        train_full, test = split_by_class_half(ds)
        train, val = split_train_val(train_full, SplitSpec(self.val_fraction, seed))
        return train, val, test


def _run_one(job):
    name, cfg, seed, data = job
    cfg = replace(cfg, seed=seed)
    train, val, test = data.make(seed) if hasattr(data, "make") else data
    try:
        return name, seed, run_episode(cfg, train, val, test)
    except Exception as exc:
        raise RuntimeError(f"run failed for config {name!r}, seed {seed}: {exc}") from exc


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("ASR_LAB_THREADS", "1")))
    except ValueError:
        return 1


def _run_all(cfgs: dict, seeds: list, datasets, workers=None) -> dict:
    """Run each (name, seed) pair; results are gathered in (config, seed) order."""
    jobs = [(name, cfg, seed, datasets) for name, cfg in cfgs.items() for seed in seeds]
    workers = workers or worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]
    return {(name, seed): runlog for name, seed, runlog in results}


@dataclass
class StrategySummary:
    rows: list
    runs: dict
    ranking: dict

    def row(self, strategy: str, metric: str) -> dict:
        return next(r for r in self.rows if r["strategy"] == strategy and r["metric"] == metric)


def compare_strategies(cfgs, seeds, datasets=BlobBenchmark(), workers: int | None = None) -> StrategySummary:
    """Run every (config, seed) pair and aggregate the final test metrics.

    ``cfgs`` maps strategy names to configs. ``datasets`` is either an object
    with ``make(seed) -> (train, val, test)`` or a fixed triple.
    """
    cfgs = dict(cfgs)
    seeds = list(seeds)
    if not cfgs:
        raise ConfigError("need at least one configuration")
    if len(seeds) < 2:
        raise ConfigError("need at least two seeds")
    runs = _run_all(cfgs, seeds, datasets, workers)
    rows = []
    for name, cfg in cfgs.items():
        metric_names = list(runs[(name, seeds[0])].test)
        for metric in metric_names:
            vals = np.array([runs[(name, s)].test[metric] for s in seeds])
            rows.append({
                "strategy": name,
                "loss": cfg.loss,
                "metric": metric,
                "mean": float(vals.mean()),
                "std": float(vals.std(ddof=1)),
                "n_seeds": len(seeds),
            })
    ranking = {}
    for metric in {r["metric"] for r in rows}:
        sel = sorted((r for r in rows if r["metric"] == metric), key=lambda r: -r["mean"])
        ranking[metric] = [r["strategy"] for r in sel]
    return StrategySummary(rows, runs, ranking)
