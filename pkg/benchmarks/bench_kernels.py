"""Time the compiled and pure-numpy propagation kernels.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--q 1001 4001] [--n 2 4 8]

Prints one row per (N, q, backend) with the best wall time of a full
propagation plus cell-averaged dipole trace, and the speed-up of the
compiled kernels when they are available.
"""

import argparse
import time

import numpy as np

from qtrack import _backend
from qtrack.dynamics import TimeGrid, dipole_trace, propagate
from qtrack.systems import random_system


def time_once(model, row, grid):
    t0 = time.perf_counter()
    traj = propagate(model, row, grid)
    dipole_trace(traj, model.mu)
    return time.perf_counter() - t0


def best_of(model, row, grid, repeat):
    return min(time_once(model, row, grid) for _ in range(repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--q", type=int, nargs="+", default=[1001, 4001])
    ap.add_argument("--n", type=int, nargs="+", default=[2, 4, 8])
    args = ap.parse_args(argv)

    backends = ["python"] + (["compiled"] if _backend.has_compiled() else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the numpy fallback only")
    print(f"{'N':>3} {'q':>6} {'backend':>9} {'seconds':>10} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for n in args.n:
        model = random_system(n, rng)
        for q in args.q:
            grid = TimeGrid(20.0, q)
            row = 0.1 * np.sin(2.0 * grid.times)
            times = {}
            for name in backends:
                previous = _backend.use_backend(name)
                try:
                    time_once(model, row, grid)  # warm-up
                    times[name] = best_of(model, row, grid, args.repeat)
                finally:
                    _backend.use_backend(previous)
            for name in backends:
                ratio = times["python"] / times[name]
                print(f"{n:>3} {q:>6} {name:>9} {times[name]:>10.5f} {ratio:>8.2f}")


if __name__ == "__main__":
    main()
