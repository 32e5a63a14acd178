"""
Time the numba kernels against the numpy fallback.

The backend is fixed at import, so each one runs in its own interpreter::

    python3 benchmarks/bench_backends.py            # both, side by side
    python3 benchmarks/bench_backends.py --worker   # one, per FIRSTEXIT_BACKEND
"""
import argparse
import json
import math
import os
import subprocess
import sys
import time

import numpy as np


def _best(fn, repeat):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def worker(repeat):
    from firstexit import (EulerConfig, PairModel, backend_name, calibrate, joint_density,
                           sample)
    from firstexit.analysis import quadrant_statistic
    from firstexit.euler import euler_paths
    from firstexit.experiments import standard_model

    zero = standard_model(2, 0.0, 0.5)
    drift = standard_model(2, -0.05, 0.5)
    cz, cd = calibrate(zero), calibrate(drift)
    pair = drift.pair(0, 1)
    assert isinstance(pair, PairModel)
    rng = np.random.default_rng(0)
    s = rng.uniform(0.1, 20.0, 20000)
    t = rng.uniform(0.1, 20.0, 20000)
    a = rng.exponential(size=(20000, 2))
    b = rng.exponential(size=(20000, 2))

    cases = {
        "density, 2e4 drifted points": lambda: joint_density(pair, s, t),
        "zero-drift sampler, 1e6": lambda: sample(zero, cz, 1000000, rng=1),
        "drifted sampler, 2e4": lambda: sample(drift, cd, 20000, rng=1),
        "Euler, 1e3 paths x 6400 steps": lambda: euler_paths(
            zero, EulerConfig(scenarios=1000, seed=1)),
        "2-D K-S statistic, 2e4 + 2e4": lambda: quadrant_statistic(a, b),
    }
    out = {"backend": backend_name(),
           "timings": {k: _best(fn, repeat) for k, fn in cases.items()}}
    print(json.dumps(out))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--worker", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    results = {}
    for backend in ("numba", "numpy"):
        env = dict(os.environ, FIRSTEXIT_BACKEND=backend)
        proc = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(args.repeat)],
                              env=env, capture_output=True, text=True, check=True)
        results[backend] = json.loads(proc.stdout.strip().splitlines()[-1])["timings"]
    width = max(len(k) for k in results["numba"])
    print(f"{'kernel':<{width}}  {'numba s':>10}  {'numpy s':>10}  {'speedup':>8}")
    for k in results["numba"]:
        nb, npy = results["numba"][k], results["numpy"][k]
        ratio = npy / nb if nb > 0 else math.inf
        print(f"{k:<{width}}  {nb:>10.4f}  {npy:>10.4f}  {ratio:>7.1f}x")


if __name__ == "__main__":
    main()
