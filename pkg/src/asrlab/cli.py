"""Command-line front end: ``asr-lab {train,ablate-init,bandit,compare,eval}``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration or arguments.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import encoder as enc
from .asrloop import ConfigError, ablate_init, compare_strategies, run_episode, seed_streams
from .config import load_config
from .metrics import evaluate
from .rl import run_softmax_bandit, steps_to_majority
from .samplers import INIT_KINDS

log = logging.getLogger("asrlab")

COMPARE_STRATEGIES = ("random", "semihard", "distance", "asr_reinforce", "asr_ppo")
COMPARE_LOSSES = ("triplet", "margin")

_NUM = {"type": "number"}
_METRICS = {"type": "object", "required": ["R@1", "nmi", "f1", "weighted"],
            "additionalProperties": _NUM}
RECORD_SCHEMA = {
    "type": "object",
    "required": ["step", "metrics", "state", "action", "taken_action", "reward", "distribution", "loss", "beta"],
    "properties": {
        "step": {"type": "integer", "minimum": 1},
        "metrics": _METRICS,
        "state": {"type": "array", "items": _NUM, "minItems": 1},
        "action": {"type": ["integer", "null"]},
        "taken_action": {"type": ["integer", "null"]},
        "reward": _NUM,
        "distribution": {
            "type": "object",
            "required": ["bin_edges", "weights"],
            "properties": {"bin_edges": {"type": "array", "items": _NUM},
                           "weights": {"type": "array", "items": {"type": "number", "minimum": 0}}},
        },
        "loss": _NUM,
        "beta": _NUM,
    },
}
SUMMARY_SCHEMA = {
    "type": "object",
    "required": ["config", "seed", "initial", "test", "best_epoch", "n_records"],
    "properties": {"initial": _METRICS, "test": _METRICS, "seed": {"type": "integer"}},
}
DIP_SCHEMA = {
    "type": "object",
    "required": list(INIT_KINDS),
    "additionalProperties": {
        "type": "object",
        "required": ["dip_rate", "n_seeds", "dips"],
        "properties": {"dip_rate": {"type": "number", "minimum": 0, "maximum": 1},
                       "n_seeds": {"type": "integer"}},
    },
}


class UsageError(Exception):
    pass


def _write_json(path: Path, obj, schema=None):
    if schema is not None:
        jsonschema.validate(obj, schema)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _experiment(args):
    overrides = list(args.set or [])
    exp = load_config(args.config, overrides)
    if getattr(args, "seed", None) is not None:
        exp = replace(exp, seeds=[args.seed])
    if getattr(args, "out", None):
        exp = replace(exp, out=args.out)
    return exp


def cmd_train(args) -> int:
    exp = _experiment(args)
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    best_rows = []
    for seed in exp.seeds:
        train, val, test = exp.data.make(seed)
        runlog = run_episode(replace(exp.asr, seed=seed), train, val, test)
        run_dir = out / f"seed_{seed}"
        run_dir.mkdir(exist_ok=True)
        for rec in runlog.records:
            jsonschema.validate(rec, RECORD_SCHEMA)
        (run_dir / "runlog.jsonl").write_text("\n".join(runlog.jsonl_lines()) + "\n", encoding="utf-8")
        summary = runlog.summary()
        summary["experiment"] = exp.echo()
        _write_json(run_dir / "summary.json", summary, SUMMARY_SCHEMA)
        enc.save_checkpoint(run_dir / "encoder.npz", enc.encoder_state(runlog.encoder))
        if runlog.policy is not None:
            enc.save_checkpoint(run_dir / "policy.npz", runlog.policy.tensors())
        best_rows += [(seed, metric, epoch) for metric, epoch in summary["best_epoch"].items()]
        log.info("seed %d: test R@1 %.4f", seed, runlog.test["R@1"])
    _write_csv(out / "best_epochs.csv", ["seed", "metric", "best_epoch"], best_rows)
    return 0


def cmd_ablate_init(args) -> int:
    exp = _experiment(args)
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    res = ablate_init(exp.asr, exp.seeds, exp.data, exp.gravity_delta)
    traj_rows = []
    report = {}
    for kind, entry in res.items():
        for seed, run in entry["runs"].items():
            for rec in run.records:
                m = rec["metrics"]
                traj_rows.append((kind, seed, rec["step"], m["weighted"], m["R@1"], m["nmi"], m["f1"]))
        report[kind] = {
            "dip_rate": entry["dip_rate"],
            "n_seeds": len(entry["runs"]),
            "delta": exp.gravity_delta,
            "dips": {str(s): (None if d is None else {"index": d[0], "epoch": d[0] + 1, "depth": d[1]})
                     for s, d in entry["dips"].items()},
        }
    _write_csv(out / "trajectories.csv", ["init", "seed", "epoch", "weighted", "R@1", "nmi", "f1"], traj_rows)
    _write_json(out / "dips.json", report, DIP_SCHEMA)
    _write_csv(out / "dip_rates.csv", ["init", "dip_rate", "n_seeds"],
               [(k, v["dip_rate"], v["n_seeds"]) for k, v in report.items()])
    for kind, v in report.items():
        print(f"{kind}: dip rate {v['dip_rate']:.2f}")
    return 0


def _floats(text: str, name: str) -> list:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"--{name} must be a comma-separated list of numbers, got {text!r}") from None
    if not all(np.isfinite(vals)):
        raise UsageError(f"--{name} contains non-finite values")
    return vals


def cmd_bandit(args) -> int:
    rewards = _floats(args.rewards, "rewards")
    init = _floats(args.init, "init") if args.init else [0.0] * len(rewards)
    if len(rewards) < 2 or len(init) != len(rewards):
        raise UsageError("--rewards needs >= 2 values and --init the same count")
    if args.steps < 1 or not args.lr > 0:
        raise UsageError("--steps must be >= 1 and --lr positive")
    traj = run_softmax_bandit(rewards, init, args.steps, args.lr)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + [f"p_{a}" for a in range(len(rewards))])
    for t, row in enumerate(traj):
        w.writerow([t] + [repr(float(p)) for p in row])
    best = int(np.argmax(rewards))
    summary = {"optimal_action": best, "steps_to_majority": steps_to_majority(traj, best),
               "steps": args.steps, "lr": args.lr, "rewards": rewards, "init_logits": init}
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(buf.getvalue(), encoding="utf-8")
        out.with_suffix(".summary.json").write_text(json.dumps(summary, sort_keys=True) + "\n", encoding="utf-8")
        print(json.dumps(summary, sort_keys=True))
    else:
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_compare(args) -> int:
    exp = _experiment(args)
    if len(exp.seeds) < 2:
        raise ConfigError("compare needs at least two seeds")
    out = Path(exp.out)
    out.mkdir(parents=True, exist_ok=True)
    cfgs = {f"{s}+{loss}": replace(exp.asr, sampler=s, loss=loss, gamma=None)
            for s in COMPARE_STRATEGIES for loss in COMPARE_LOSSES}
    summ = compare_strategies(cfgs, exp.seeds, exp.data)
    rows = [(r["strategy"].split("+")[0], r["loss"], r["metric"], r["mean"], r["std"], r["n_seeds"])
            for r in summ.rows]
    _write_csv(out / "summary.csv", ["strategy", "loss", "metric", "mean", "std", "n_seeds"], rows)
    _write_json(out / "ranking.json", summ.ranking)
    for name in summ.ranking["R@1"]:
        print(f"{name}: R@1 {summ.row(name, 'R@1')['mean']:.4f}")
    return 0


def cmd_eval(args) -> int:
    exp = _experiment(args)
    state = enc.load_checkpoint(args.checkpoint)
    params = enc.encoder_from_state(state)
    seed = exp.seeds[0]
    train, val, test = exp.data.make(seed)
    split = {"train": train, "val": val, "test": test}[args.split]
    # same clustering seed as the training run, so the test split reproduces its summary
    report = evaluate(enc.embed(params, split.features), split.labels, exp.asr.eval_ks,
                      seed_streams(seed).eval, exp.asr.metric_weights)
    text = json.dumps(report.to_json(), sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _parser():
    p = argparse.ArgumentParser(prog="asr-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", help="YAML file with flat dotted keys")
        if seed:
            sp.add_argument("--seed", type=int, help="run this single seed instead of the config's seeds")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    common(sub.add_parser("train", help="run one episode per seed"))
    common(sub.add_parser("ablate-init", help="sweep the six initial distributions"))
    common(sub.add_parser("compare", help="compare sampling strategies and losses"), seed=False)
    ev = sub.add_parser("eval", help="evaluate an encoder checkpoint")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", choices=("train", "val", "test"), default="test")
    b = sub.add_parser("bandit", help="softmax policy gradient on a one-state bandit")
    b.add_argument("--rewards", default="1,0")
    b.add_argument("--init", default=None, help="initial logits (default: zeros)")
    b.add_argument("--steps", type=int, default=100)
    b.add_argument("--lr", type=float, default=0.1)
    b.add_argument("--out", help="CSV path (default: stdout)")
    return p


COMMANDS = {"train": cmd_train, "ablate-init": cmd_ablate_init, "bandit": cmd_bandit,
            "compare": cmd_compare, "eval": cmd_eval}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
