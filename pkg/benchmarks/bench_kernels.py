"""Compiled vs pure-Python estimation kernels.

Times the three hot paths of a Monte Carlo estimate: the 125-point start
grid, the multi-start Nelder-Mead search, and a full ``ml_estimate`` call
(including refinement and covariance). Run with::

    python benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from qtiming import kernels
from qtiming.estimation import start_grid, ml_estimate, DEFAULT_BOUNDS
from qtiming.measurement import ExactForward
from qtiming.simulation import rng_stream, sample_counts


def _setup():
    fw = ExactForward()
    theta = (0.0, 0.5, 0.25)
    counts = sample_counts(fw.probabilities(theta), 69000, rng_stream(1, 1)).astype(float)
    fparams = np.ascontiguousarray(fw.projectors.matrix.real)
    bounds = np.array(DEFAULT_BOUNDS, dtype=float)
    return fw, counts, fparams, bounds


def _time(fn, repeat):
    fn()
    best = float("inf")
    for _ in range(3):
        t0 = time.perf_counter()
        for _ in range(repeat):
            fn()
        best = min(best, (time.perf_counter() - t0) / repeat)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    fw, counts, fparams, bounds = _setup()
    starts = start_grid(bounds)
    zeros = np.zeros(5)
    lo, hi = bounds[:, 0], bounds[:, 1]
    results = {}
    for name in kernels.available():
        core = kernels.load(name)
        saved = kernels.core
        kernels.core = core
        try:
            results[name] = {
                "start grid (125 pts)": _time(lambda: core.evaluate_many(
                    starts, 0, fparams, 1.0, True, 0, counts, zeros), args.repeat),
                "multi-start Nelder-Mead": _time(lambda: core.minimize(
                    starts, lo, hi, 0, fparams, 1.0, True, 0, counts, zeros), args.repeat),
                "ml_estimate": _time(lambda: ml_estimate(fw, counts), args.repeat),
            }
        finally:
            kernels.core = saved
    names = list(results)
    print(f"{'kernel':28s}" + "".join(f"{n:>14s}" for n in names) + ("     speed-up" if len(names) > 1 else ""))
    for task in results[names[0]]:
        row = f"{task:28s}" + "".join(f"{results[n][task] * 1e3:12.3f}ms" for n in names)
        if len(names) > 1:
            row += f"{results['python'][task] / results['cython'][task]:12.1f}x"
        print(row)


if __name__ == "__main__":
    main()
