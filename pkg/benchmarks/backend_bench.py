"""Time the walk kernel on the numba and numpy backends.

Usage: python benchmarks/backend_bench.py [--n 1000] [--d 2] [--reps 20]

Prints per-trajectory wall time for each backend plus the speedup, after
checking that both produce identical assignments.
"""

import argparse
import time

import numpy as np

from gswdesign import build_setup, run_gsw
from gswdesign.backend import backend_name


def time_backend(setup, reps: int, seed: int, backend: str) -> float:
    run_gsw(setup, seed, rep=0, backend_name=backend)  # warm up / compile
    t0 = time.perf_counter()
    for k in range(reps):
        run_gsw(setup, seed, rep=k, backend_name=backend)
    return (time.perf_counter() - t0) / reps


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=1000)
    parser.add_argument("--d", type=int, default=2)
    parser.add_argument("--phi", type=float, default=0.5)
    parser.add_argument("--reps", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    X = rng.standard_normal((args.n, args.d))
    if args.d:
        X /= np.linalg.norm(X, axis=1, keepdims=True)
    setup = build_setup(X, args.phi)

    z_numpy = run_gsw(setup, args.seed, backend_name="numpy")
    try:
        z_numba = run_gsw(setup, args.seed, backend_name="numba")
    except ImportError:
        print("numba unavailable; only the numpy backend can run here")
        t_np = time_backend(setup, args.reps, args.seed, "numpy")
        print(f"numpy : {t_np * 1e3:8.2f} ms/trajectory")
        return 0
    agree = np.array_equal(z_numpy, z_numba)
    print(f"default backend: {backend_name()}; backends agree on z: {agree}")

    t_np = time_backend(setup, max(args.reps // 4, 2), args.seed, "numpy")
    t_nb = time_backend(setup, args.reps, args.seed, "numba")
    print(f"n={args.n} d={args.d} phi={args.phi} ({args.reps} trajectories)")
    print(f"numpy : {t_np * 1e3:8.2f} ms/trajectory")
    print(f"numba : {t_nb * 1e3:8.2f} ms/trajectory")
    print(f"speedup: x{t_np / t_nb:.1f}")
    return 0 if agree else 1


if __name__ == "__main__":
    raise SystemExit(main())
