"""Compare the compiled and pure-Python coordinate-descent kernels.

Usage::

    python benchmarks/bench_kernels.py [--shapes 8x8 16x16x8 30x36x30] [--repeat 3]

For each shape it times a single-penalty fit (mid-path, warm start from zero)
with both kernels, checks that they return the same coefficients, and prints
one row per shape.
"""
import argparse
import time

import numpy as np

from tensorcatch.solver import SolverConfig, SolverInputs, available_kernels, fit_single, lambda_max
from tensorcatch.simulation import CovSpec, make_cov


def instance(shape, K, rng):
    sigmas = [make_cov(CovSpec("AR", p, 0.5)) for p in shape]
    p = int(np.prod(shape))
    delta = np.zeros((K - 1, p))
    hot = rng.choice(p, size=max(1, p // 50), replace=False)
    delta[:, hot] = rng.normal(0, 1, (K - 1, hot.size))
    delta += rng.normal(0, 0.05, delta.shape)
    return SolverInputs(sigmas, delta)


def time_fit(inputs, lam, kernel, repeat):
    best = np.inf
    fit = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        fit = fit_single(lam, inputs, SolverConfig(kernel=kernel, trace=False))
        best = min(best, time.perf_counter() - t0)
    return best, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--shapes", nargs="+", default=["8x8", "16x16x8", "20x20x10"])
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    kernels = sorted(available_kernels())
    print(f"kernels available: {', '.join(kernels)}")
    print(f"{'shape':>12} {'p':>7} {'selected':>8} " + " ".join(f"{k + ' [s]':>12}" for k in kernels)
          + f" {'speedup':>8} {'max |diff|':>11}")
    rng = np.random.default_rng(args.seed)
    for text in args.shapes:
        shape = tuple(int(t) for t in text.lower().split("x"))
        inputs = instance(shape, args.classes, rng)
        lam = 0.3 * lambda_max(inputs)
        times, fits = {}, {}
        for k in kernels:
            times[k], fits[k] = time_fit(inputs, lam, k, args.repeat)
        sel = int(np.any(fits[kernels[0]].beta != 0, axis=0).sum())
        speed = diff = float("nan")
        if "cython" in times and "python" in times:
            speed = times["python"] / times["cython"]
            diff = float(np.abs(fits["python"].beta - fits["cython"].beta).max())
        print(f"{text:>12} {inputs.p:>7} {sel:>8} " + " ".join(f"{times[k]:>12.4f}" for k in kernels)
              + f" {speed:>8.1f} {diff:>11.2e}")


if __name__ == "__main__":
    main()
