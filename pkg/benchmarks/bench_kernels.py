"""Compiled core vs numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Times each kernel on toy-sized inputs with both backends, then one full
annealed run (L=8, T=150, N=1280) per backend in a fresh interpreter, since
the sampler binds its backend at import.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from pidld import toy_mixture
from pidld._backend import compiled, fallback

FULL_RUN = """
import time
from pidld import run_annealed, toy_mixture, PIDGains
from pidld.sampler import toy_config
t = time.perf_counter()
run_annealed(toy_config(PIDGains(1.0, 0.1, 6.0), seed=0), toy_mixture())
print(time.perf_counter() - t)
"""


def _cases(k, n=1280, T=150):
    toy = toy_mixture()
    logw = np.log(toy.weights)
    x0 = np.random.default_rng(0).uniform(-8, 8, (n, 2))
    ids = np.arange(n, dtype=np.uint64)
    w = np.random.default_rng(1).standard_normal(100_000)

    def level():
        x = x0.copy()
        snaps = np.empty((T // 5, n, 2))
        k.pid_level_gmm(x, np.zeros((n, 2)), np.zeros((n, 2)), logw, toy.means, 2.0, 0.01, 1.0, 6.0,
                        np.full(T, 0.1), 0, 7, ids, 0.0, None, snaps, 5, 1e12)

    return {
        "normals (150 steps x 1280)": lambda: k.normals(7, ids, 1, T, 2),
        "gmm_score (1280 x 2)": lambda: k.gmm_score(x0, logw, toy.means, 2.0),
        "pid level (150 steps x 1280)": level,
        "em_two (1280 samples)": lambda: k.em_two(x0, toy.means, 1.0, 1e-8, 200),
        "ar2_filter (1e5)": lambda: k.ar2_filter(0.8, 0.1, w, 0.0, 0.0),
    }


def best_of(fn, repeat: int) -> float:
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 1000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def full_run(backend: str) -> float:
    env = dict(os.environ, PIDLD_BACKEND=backend)
    out = subprocess.run([sys.executable, "-c", FULL_RUN], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled is None:
        print("compiled core not available; build with `pip install -e . --no-build-isolation`")
        return 1
    fast, slow = _cases(compiled), _cases(fallback)
    print(f"{'kernel':32s} {'cython':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name in fast:
        a, b = best_of(fast[name], args.repeat), best_of(slow[name], args.repeat)
        print(f"{name:32s} {a * 1e3:10.3f}ms {b * 1e3:10.3f}ms {b / a:7.1f}x")
    a, b = full_run("cython"), full_run("python")
    print(f"{'full toy run (1200 steps)':32s} {a:11.3f}s {b:11.3f}s {b / a:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
