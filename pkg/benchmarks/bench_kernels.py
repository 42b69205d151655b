"""Compare the compiled kernels with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--skip-end-to-end]

Times each kernel on inputs shaped like the ones the library produces,
checks that both backends agree on them, and then times one blocks-world
partitioning run end to end under each backend (in a subprocess, since the
backend is fixed at import).
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from mdphom import kernels

END_TO_END = """
import time
from mdphom import kernels
from mdphom.classifiers import make_classifier
from mdphom.envs import BlocksWorld, enumerate_model
from mdphom.partitioning import PartitionConfig, online_partition_iteration
env = BlocksWorld(0, 1, 2)
ts = enumerate_model(env).to_experience() * 5
t0 = time.perf_counter()
res = online_partition_iteration(ts, make_classifier("tree", env.encode), PartitionConfig(max_blocks=100), env.admissible)
print(kernels.BACKEND, time.perf_counter() - t0, len(res.partition))
"""


def cases(rng: np.random.Generator) -> dict:
    train = np.ascontiguousarray(rng.integers(0, 2, size=(2000, 21)).astype(np.float64))
    queries = np.ascontiguousarray(rng.integers(0, 2, size=(12, 21)).astype(np.float64))
    X = np.ascontiguousarray(rng.integers(0, 2, size=(3000, 21)).astype(np.float64))
    y = rng.integers(0, 16, size=3000).astype(np.int64)
    w = rng.integers(1, 5, size=3000).astype(np.float64)
    rows = np.arange(3000, dtype=np.int64)
    n_states, per = 500, 12
    ptr = np.arange(0, n_states * per + 1, per, dtype=np.int64)
    reward = rng.normal(size=n_states * per)
    succ = rng.integers(0, n_states, size=n_states * per).astype(np.int64)
    q = rng.normal(size=n_states * per)
    return {
        "nearest (2000x21 index, 12 queries)": ("nearest", (train, queries)),
        "best_split (3000 rows, 21 features, 16 classes)": ("best_split", (X, y, w, rows, 16)),
        "bellman_sweep (500 states x 12 actions)": (
            "bellman_sweep", (reward, succ, ptr, 0.9, q, np.empty_like(q))),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args(argv)

    backends = kernels.available()
    print(f"backends: {', '.join(backends)}")
    if "cython" not in backends:
        print("compiled kernels are not built; only the fallback can be timed")
    impls = {name: kernels.load(name) for name in backends}
    for label, (fn, fn_args) in cases(np.random.default_rng(0)).items():
        outs, times = {}, {}
        for name, mod in impls.items():
            f = getattr(mod, fn)
            outs[name] = f(*fn_args)
            number = max(1, int(0.2 / max(timeit.timeit(lambda: f(*fn_args), number=1), 1e-6)))
            best = min(timeit.repeat(lambda: f(*fn_args), number=number, repeat=args.repeat))
            times[name] = best / number
        ref = outs["python"]
        agree = all(np.allclose(np.asarray(o, dtype=float), np.asarray(ref, dtype=float), equal_nan=True)
                    for o in outs.values())
        line = "  ".join(f"{n}={t * 1e3:9.3f} ms" for n, t in times.items())
        speedup = f"  speedup x{times['python'] / times['cython']:.1f}" if "cython" in times else ""
        print(f"{label:50s} {line}{speedup}  agree={agree}")

    if not args.skip_end_to_end:
        print("end to end: blocks-world partitioning with the tree classifier")
        for name in backends:
            env = dict(os.environ)
            if name == "python":
                env["MDPHOM_PURE"] = "1"
            else:
                env.pop("MDPHOM_PURE", None)
            out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True,
                                 text=True, check=True)
            backend, secs, blocks = out.stdout.split()
            print(f"  {backend:7s} {float(secs):7.2f} s  ({blocks} blocks)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
