"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is run on the same inputs under both backends; outputs are
checked for exact equality before timings are reported.
"""

import argparse
import timeit

import numpy as np

from asrlab import kernels


def _inputs(rng, n=32, m=28, n_bins=10, N=240):
    d = rng.random((n, m)) * 2
    valid = (rng.random((n, m)) < 0.9).astype(np.uint8)
    bins = np.minimum((d / 0.2).astype(np.int64), n_bins - 1)
    emb = rng.normal(size=(N, 16))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    dist = np.sqrt(np.maximum(((emb[:, None] - emb[None]) ** 2).sum(-1), 0))
    return {
        "select_weighted": (rng.random((n, m)), valid, rng.random(n)),
        "select_binned": (bins, valid, rng.random(n_bins) + 1e-3, rng.random(n), rng.random(n)),
        "select_semihard": (d, rng.random(n), valid, 0.2, rng.random(n)),
        "knn_hit_counts": (dist, rng.integers(0, 4, N), np.array([1, 2, 4, 8])),
    }


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled backend unavailable; only the fallback will be timed")
    inputs = _inputs(np.random.default_rng(args.seed))
    print(f"{'kernel':<18}" + "".join(f"{name:>14}" for name in impls) + f"{'speedup':>10}")
    for kname, call_args in inputs.items():
        fn = getattr(kernels, kname)
        outs = {name: fn(*call_args, impl=mod) for name, mod in impls.items()}
        ref = next(iter(outs.values()))
        for name, out in outs.items():
            if not np.array_equal(out, ref):
                raise SystemExit(f"{kname}: backend {name} disagrees")
        times = {}
        for name, mod in impls.items():
            number = 20 if name == "cython" else 2
            t = min(timeit.repeat(lambda: fn(*call_args, impl=mod), number=number, repeat=args.repeat))
            times[name] = t / number
        speed = times["python"] / times["cython"] if len(times) == 2 else float("nan")
        print(f"{kname:<18}" + "".join(f"{times[n] * 1e3:>12.3f}ms" for n in impls) + f"{speed:>9.1f}x")


if __name__ == "__main__":
    main()
