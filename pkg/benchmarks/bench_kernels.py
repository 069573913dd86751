"""Timing comparison of the compiled kernel core against the numpy
fallback.

Run directly:

    python3 benchmarks/bench_kernels.py [--sizes 1000 100000] [--repeat 7]

The fallback is loaded by re-importing the kernels package in a fresh
interpreter with HYPERPATH_PURE_PYTHON=1, so both backends are measured
under identical conditions. Reported numbers are best-of-repeat wall
times per call and the resulting speedup.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

WORKER = """
import json, os, sys, time
import numpy as np
from hyperpath import _kernels

sizes = json.loads(sys.argv[1])
repeat = int(sys.argv[2])
rng = np.random.default_rng(42)
out = {"backend": _kernels.BACKEND, "compiled": _kernels.COMPILED,
       "theta_root": {}, "bessel_j1": {}}

for n in sizes:
    u_sq = (3.0 * rng.standard_normal(n)) ** 2
    t = rng.uniform(-40.0, 40.0, size=n)
    _kernels.theta_root_batch(u_sq, 1.5, 1.5)     # warm up
    _kernels.bessel_j1_batch(t)
    best = min(
        (lambda t0: (_kernels.theta_root_batch(u_sq, 1.5, 1.5),
                     time.perf_counter() - t0)[1])(time.perf_counter())
        for _ in range(repeat)
    )
    out["theta_root"][str(n)] = best
    best = min(
        (lambda t0: (_kernels.bessel_j1_batch(t),
                     time.perf_counter() - t0)[1])(time.perf_counter())
        for _ in range(repeat)
    )
    out["bessel_j1"][str(n)] = best

print(json.dumps(out))
"""


def run_backend(pure, sizes, repeat):
    env = dict(os.environ)
    env.pop("HYPERPATH_PURE_PYTHON", None)
    if pure:
        env["HYPERPATH_PURE_PYTHON"] = "1"
    res = subprocess.run(
        [sys.executable, "-c", WORKER, json.dumps(sizes), str(repeat)],
        env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+",
                    default=[1_000, 10_000, 100_000])
    ap.add_argument("--repeat", type=int, default=7)
    args = ap.parse_args()

    compiled = run_backend(False, args.sizes, args.repeat)
    fallback = run_backend(True, args.sizes, args.repeat)
    if not compiled["compiled"]:
        print("note: compiled core unavailable, comparing fallback to "
              "itself")

    print(f"{'kernel':<12} {'n':>8} {compiled['backend']:>12} "
          f"{fallback['backend']:>12} {'speedup':>8}")
    for kernel in ("theta_root", "bessel_j1"):
        for n in args.sizes:
            a = compiled[kernel][str(n)]
            b = fallback[kernel][str(n)]
            print(f"{kernel:<12} {n:>8} {a * 1e6:>10.1f}us "
                  f"{b * 1e6:>10.1f}us {b / a:>7.2f}x")


if __name__ == "__main__":
    main()
