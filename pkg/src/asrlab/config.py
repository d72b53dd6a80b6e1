"""Flat dotted-key experiment configuration.

A config file is a YAML mapping. Nested mappings are flattened, so
``policy: {clip_epsilon: 0.1}`` and ``policy.clip_epsilon: 0.1`` mean the
same thing. Unknown keys are rejected.

Keys and defaults
-----------------
loss: triplet                 contrastive | triplet | margin
sampler: asr_ppo              random | semihard | distance | asr_reinforce | asr_ppo
init.kind: normal_low         one of the six initial distributions
init.mu, init.sigma, init.limit, init.seed
epochs: 40
inner_iters: 20               encoder steps per RL step (= one epoch)
batch_size: 32, batch_classes: 4
metric_weights.<name>: R@1 0.5, nmi 0.5
n_bins: 10, multiplier: 2.0, state_mode: augmented
hidden: 64, d_out: 16, lr: 0.001
gamma: per-loss default, beta: 0.6, beta_lr: 0.0005, margin_reduction: sum
policy.lr: 0.003, policy.clip_epsilon: 0.2, policy.ppo_epochs: 4,
policy.eta: 0.95, policy.baseline: true, policy.hidden: 32,
policy.old_sync_every: 1
data.kind: blobs              blobs | csv
data.num_classes: 8, data.per_class: 60, data.dim: 20, data.spread: 1.25
data.val_fraction: 0.15, data.path, data.header: false
seeds: [0]
out: runs
gravity.delta: 0.02
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import yaml

from .asrloop import AsrConfig, BlobBenchmark, ConfigError
from .datasets import SplitSpec, load_csv, split_by_class_half, split_train_val
from .rl import PolicyConfig, PolicyError
from .samplers import InitialDistributionSpec, SamplerError

_ASR_KEYS = {f.name for f in fields(AsrConfig)} - {"init", "policy", "metric_weights", "seed"}
_POLICY_KEYS = {f.name for f in fields(PolicyConfig)}
_DATA_KEYS = {"kind", "num_classes", "per_class", "dim", "spread", "val_fraction", "path", "header"}
_INIT_KEYS = {"kind", "mu", "sigma", "limit", "seed"}
_TOP_KEYS = {"seeds", "out"}
_GRAVITY_KEYS = {"delta"}


@dataclass(frozen=True)
class CsvBenchmark:
    path: str
    header: bool = False
    val_fraction: float = 0.15

    def make(self, seed: int):
        ds = load_csv(self.path, self.header)
        train_full, test = split_by_class_half(ds)
        train, val = split_train_val(train_full, SplitSpec(self.val_fraction, seed))
        return train, val, test


@dataclass
class ExperimentConfig:
    asr: AsrConfig = field(default_factory=AsrConfig)
    data: object = field(default_factory=BlobBenchmark)
    seeds: list = field(default_factory=lambda: [0])
    out: str = "runs"
    gravity_delta: float = 0.02

    def echo(self) -> dict:
        data = {"kind": "csv", **vars(self.data)} if isinstance(self.data, CsvBenchmark) else \
            {"kind": "blobs", **vars(self.data)}
        return {"asr": self.asr.to_json(), "data": data, "seeds": list(self.seeds), "out": self.out,
                "gravity.delta": self.gravity_delta}


def flatten(doc, prefix="") -> dict:
    out = {}
    for k, v in (doc or {}).items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key != "metric_weights" and not key.startswith("metric_weights."):
            out.update(flatten(v, key + "."))
        elif isinstance(v, dict):
            out.update({f"{key}.{kk}": vv for kk, vv in v.items()})
        else:
            out[key] = v
    return out


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, value = text.split("=", 1)
    return key.strip(), yaml.safe_load(value)


def load_flat(path=None, overrides=()) -> dict:
    flat = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        if doc is not None and not isinstance(doc, dict):
            raise ConfigError("config must be a key-value mapping")
        flat = flatten(doc)
    for item in overrides:
        k, v = parse_override(item)
        flat[k] = v
    return flat


def build(flat: dict) -> ExperimentConfig:
    asr_kw, pol_kw, data_kw, init_kw, weights = {}, {}, {}, {}, {}
    top = {}
    gravity = {}
    for key, value in flat.items():
        head, _, rest = key.partition(".")
        if not rest and key in _ASR_KEYS:
            asr_kw[key] = value
        elif not rest and key in _TOP_KEYS:
            top[key] = value
        elif head == "policy" and rest in _POLICY_KEYS:
            pol_kw[rest] = value
        elif head == "data" and rest in _DATA_KEYS:
            data_kw[rest] = value
        elif head == "init" and rest in _INIT_KEYS:
            init_kw[rest] = value
        elif head == "metric_weights" and rest:
            weights[rest] = float(value)
        elif head == "gravity" and rest in _GRAVITY_KEYS:
            gravity[rest] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        kind = init_kw.pop("kind", "normal_low")
        init_seed = int(init_kw.pop("seed", 0))
        init = InitialDistributionSpec(kind, {k: float(v) for k, v in init_kw.items()}, init_seed)
        policy = PolicyConfig(**pol_kw)
        if "eval_ks" in asr_kw:
            asr_kw["eval_ks"] = tuple(int(k) for k in asr_kw["eval_ks"])
        asr = AsrConfig(init=init, policy=policy, **asr_kw)
        if weights:
            asr = replace(asr, metric_weights=weights)
        data_kind = data_kw.pop("kind", "blobs")
        if data_kind == "blobs":
            data_kw.pop("header", None)
            if "path" in data_kw:
                raise ConfigError("data.path only applies to data.kind: csv")
            data = BlobBenchmark(**data_kw)
        elif data_kind == "csv":
            if "path" not in data_kw:
                raise ConfigError("data.kind: csv needs data.path")
            extra = set(data_kw) - {"path", "header", "val_fraction"}
            if extra:
                raise ConfigError(f"keys {sorted(extra)} do not apply to csv data")
            data = CsvBenchmark(**data_kw)
        else:
            raise ConfigError(f"unknown data.kind {data_kind!r}")
    except (TypeError, SamplerError, PolicyError) as exc:
        raise ConfigError(str(exc)) from exc
    seeds = top.get("seeds", [0])
    if isinstance(seeds, int):
        seeds = [seeds]
    return ExperimentConfig(asr, data, [int(s) for s in seeds], str(top.get("out", "runs")),
                            float(gravity.get("delta", 0.02)))


def load_config(path=None, overrides=()) -> ExperimentConfig:
    return build(load_flat(path, overrides))
