"""Time the numba kernels against the numpy fallback.

Usage: ``python3 benchmarks/bench_kernels.py [--repeat N]``. The first numba
call is timed separately as the compile cost; steady-state numbers take the
best of ``repeat`` runs.
"""
import argparse
import math
import time

import numpy as np

from dfspde import _kernels_numba as nb
from dfspde import _kernels_numpy as npk
from dfspde.core import LevelGrid, MonotoneField, SpatialGrid
from dfspde.integrator import aggregate_block
from dfspde.mass_sde import power_model
from dfspde.models import SbmModel
from dfspde.noise import SeedSpec, sample_panels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def pava_case(k):
    y = np.random.default_rng(0).standard_normal(4096).cumsum()
    return lambda: k.pava(y)


def evolve_case(k, nsteps=1000):
    g = SpatialGrid(-8.0, 8.0, 256)
    model = SbmModel(LevelGrid(8.0, 128), 0.0)
    Y0 = MonotoneField.gaussian_cdf(g, 0.0, 0.5)
    S = aggregate_block(model, sample_panels(SeedSpec(0).generator(), model.levels, 1e-4, nsteps, False))

    def go():
        y = Y0.values.copy()
        k.evolve(y, S, model.levels.du, 1e-4, g.dx, False, model.u_max, False, math.inf, 100, 0,
                 np.empty(nsteps), np.empty(nsteps), np.empty(nsteps, np.int64), np.empty((0, y.size)),
                 np.zeros((nsteps // 100 + 1, y.size)))
    return go


def mass_case(k, R=2000, m=1000):
    xi = np.random.default_rng(0).standard_normal((R, m))
    args = power_model(0.5).mass_kernel_args()

    def go():
        z = np.ones(R)
        k.mass_chunk(z, np.ones(R, bool), np.full(R, -1, np.int64), np.zeros(R), np.zeros(R), np.zeros(R),
                     xi, math.sqrt(1e-3), 1e-3, *args, 0.0, 0, np.empty((0, m)))
    return go


CASES = {"pava (n=4096)": pava_case, "evolve (nx=256, 1000 steps)": evolve_case,
         "mass_chunk (2000 x 1000)": mass_case}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':<30} {'numpy s':>10} {'numba s':>10} {'compile s':>10} {'speedup':>8}")
    for name, make in CASES.items():
        t0 = time.perf_counter()
        make(nb)()
        compile_s = time.perf_counter() - t0
        t_nb = best_of(make(nb), args.repeat)
        t_np = best_of(make(npk), max(1, args.repeat // 2))
        print(f"{name:<30} {t_np:10.4f} {t_nb:10.4f} {compile_s:10.3f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
