"""Named verification suites with pinned reference configurations.

Every suite returns a list of report dicts (see ``diagnostics.report``); a
suite passes when every report does. ``quick=True`` shrinks replica counts
for smoke runs and is not what the acceptance thresholds refer to.
"""
from __future__ import annotations

import hashlib
import io
import math
import time

import numpy as np
from scipy.special import ndtr

from . import diagnostics as D
from .core import LevelGrid, MonotoneField, SpatialGrid
from .integrator import SchemeConfig, run, run_ensemble, write_mass_csv, write_snapshots_csv
from .mass_sde import classify_extinction, power_model, simulate_mass_ensemble, write_verdicts_csv
from .models import FvModel, SbmModel, discrete_variance_rate, variance_rate
from .noise import SeedSpec, aggregate_fv_block, aggregate_sbm_block

# reference SPDE setup: levels must sit well above any mass a replica reaches
REF_GRID = (-8.0, 8.0, 256)
REF_LEVELS = (8.0, 128)
SEED = 0
KS_NU = 1024


def ref_grid() -> SpatialGrid:
    return SpatialGrid(*REF_GRID)


def ref_sbm(gamma_prime: float = 0.0) -> SbmModel:
    return SbmModel(LevelGrid(*REF_LEVELS), gamma_prime=gamma_prime)


def zero_sbm() -> SbmModel:
    levels = LevelGrid(*REF_LEVELS)
    return SbmModel(levels, table=np.zeros(levels.nu))


def ref_initial(grid: SpatialGrid | None = None) -> MonotoneField:
    return MonotoneField.gaussian_cdf(grid or ref_grid(), 0.0, 0.5, 1.0)


def heat(quick: bool = False) -> list[dict]:
    """Zero-noise run against the analytic Gaussian heat flow."""
    grid = ref_grid()
    s0, T, dt = 0.5, 0.5, 1e-4
    t0 = time.perf_counter()
    rec = run(ref_initial(grid), zero_sbm(), SchemeConfig(dt, snapshot_stride=5000), SeedSpec(SEED), T)
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(rec.snapshots[-1] - ndtr(grid.x / math.sqrt(s0**2 + T)))))
    params = {"nx": grid.nx, "dt": dt, "T": T, "s0": s0}
    out = [D.report("heat.max_error", params, err, 5e-3, err <= 5e-3),
           D.report("heat.runtime_s", params, elapsed, 5.0, elapsed < 5.0)]
    semi = run(ref_initial(grid), zero_sbm(), SchemeConfig(1e-3, "semi-implicit", snapshot_stride=500),
               SeedSpec(SEED), 0.5)
    ref = D.reference_heat_solve(ref_initial(grid), 1e-3, 500)
    d = float(np.max(np.abs(semi.snapshots[-1] - ref)))
    out.append(D.report("heat.semi_implicit_vs_banded", {"dt": 1e-3, "steps": 500}, d, 1e-12, d <= 1e-12))
    return out


def martingale(quick: bool = False) -> list[dict]:
    replicas = 200 if quick else 2000
    grid = ref_grid()
    T, dt = 0.5, 1e-4
    t0 = time.perf_counter()
    summ = run_ensemble(ref_initial(grid), ref_sbm(), SchemeConfig(dt), SEED, replicas, T)
    elapsed = time.perf_counter() - t0
    res = D.mass_martingale_test(summ, 1.0)
    params = {"replicas": replicas, "T": T, "dt": dt, "u_max": REF_LEVELS[0], "nu": REF_LEVELS[1],
              "aborted": len(summ.aborted), "master_seed": SEED}
    return [D.report("martingale.z", params, res.z, 3.0, res.passed, res.se),
            D.report("martingale.runtime_s", params, elapsed, 120.0, elapsed < 120.0)]


def qv(quick: bool = False) -> list[dict]:
    replicas = 50 if quick else 200
    grid = ref_grid()
    model = ref_sbm()
    dt, T = 1e-4, 0.25
    Y0 = ref_initial(grid)
    spde = np.array([D.qv_test(run(Y0, model, SchemeConfig(dt), SeedSpec(SEED, r), T, snapshots=False),
                               model) for r in range(replicas)])
    med = float(np.median(spde))
    params = {"replicas": replicas, "dt": dt, "T": T}
    # the cross-check needs du << sampling spread, else the floor(M/du) rate bias dominates KS
    fine = SbmModel(LevelGrid(REF_LEVELS[0], KS_NU), 0.0)
    spde_fine = np.array([D.qv_test(run(Y0, fine, SchemeConfig(dt), SeedSpec(SEED, r), T, snapshots=False),
                                    fine) for r in range(replicas)])
    ens = simulate_mass_ensemble(1.0, power_model(0.0), dt, T, SEED + 1, replicas)
    p = D.qv_two_sample(spde_fine, ens.qv_relative_errors())
    return [D.report("qv.median_relative_error", params, med, 0.10, med <= 0.10),
            D.report("qv.ks_spde_vs_mass_sde", {**params, "nu": KS_NU}, p, 0.01, p >= 0.01)]


def comparison(quick: bool = False) -> list[dict]:
    replicas = 10 if quick else 50
    grid = ref_grid()
    hi = ref_initial(grid)
    lo = MonotoneField(grid, 0.5 * hi.values)
    coarse, fine = D.comparison_refinement(lo, hi, ref_sbm(), SchemeConfig(1e-4, snapshot_stride=10),
                                           SEED, replicas, 0.25)
    params = {"replicas": replicas, "dt": 1e-4, "T": 0.25, "eps": coarse.eps,
              "max_violation": coarse.max_violation}
    return [
        D.report("comparison.violation_fraction", params, coarse.violation_fraction, 0.01,
                 coarse.violation_fraction <= 0.01),
        D.report("comparison.half_dt_fraction", {**params, "dt": 5e-5,
                                                 "max_violation": fine.max_violation},
                 fine.violation_fraction, coarse.violation_fraction,
                 fine.violation_fraction <= coarse.violation_fraction),
    ]


def fv(quick: bool = False) -> list[dict]:
    grid = SpatialGrid(-6.0, 6.0, 128)
    levels = LevelGrid(1.0, 32)
    model = FvModel(levels, c=1.0)
    v = ref_initial(grid).values.copy()
    v[-1] = 1.0
    Y0 = MonotoneField(grid, v, 1.0)
    worst = 0.0
    for r in range(2 if quick else 8):
        rec = run(Y0, model, SchemeConfig(1e-3, snapshot_stride=1), SeedSpec(SEED, r), 0.2)
        worst = max(worst, D.fv_conservation_check(rec)[1])
        restart = run(rec.field(len(rec.snapshots) // 2), model, SchemeConfig(1e-3), SeedSpec(SEED, r + 100), 0.1)
        worst = max(worst, D.fv_conservation_check(restart)[1])
    out = [D.report("fv.conservation", {"replicas": 2 if quick else 8}, worst, 0.0, worst == 0.0)]
    c = 0.7
    vs = np.linspace(0.0, 1.0, 1001)
    table = FvModel(levels, table=np.full((32, 32), c))
    quad = np.array([variance_rate(table, float(x)) for x in vs])
    err = float(np.max(np.abs(quad - c * vs * (1 - vs))))
    j = np.arange(33)
    lat = discrete_variance_rate(FvModel(levels, c=c), j)
    err_lat = float(np.max(np.abs(lat - c * (j / 32) * (1 - j / 32))))
    out.append(D.report("fv.variance_rate", {"c": c, "points": vs.size}, err, 1e-10, err <= 1e-10))
    out.append(D.report("fv.lattice_variance_rate", {"c": c, "levels": 33}, err_lat, 1e-10,
                        err_lat <= 1e-10))
    return out


def extinction(quick: bool = False) -> list[dict]:
    n_feller = 1000 if quick else 10_000
    ens = simulate_mass_ensemble(1.0, power_model(0.0), 1e-4, 4.0, SEED, n_feller)
    p, se = ens.extinct_fraction, ens.extinct_se
    target = math.exp(-0.5)
    out = [D.report("extinction.feller", {"replicas": n_feller, "T": 4.0, "dt": 1e-4, "target": target},
                    p, 3 * se, abs(p - target) <= 3 * se, se)]
    replicas = 200 if quick else 2000
    grid = np.arange(9) * 0.25
    verdicts = classify_extinction(grid, 1.0, 20.0, 1e-3, replicas, SEED)
    by_g = {v.gamma_prime: v for v in verdicts}
    params = {"replicas": replicas, "T": 20.0, "dt": 1e-3, "z0": 1.0}
    low, high = by_g[0.5], by_g[1.5]
    out.append(D.report("extinction.gamma_0.5", params, low.extinct_fraction, 0.95,
                        low.extinct_fraction >= 0.95, low.se))
    out.append(D.report("extinction.gamma_1.5", params, high.extinct_fraction, 0.01,
                        high.extinct_fraction <= 0.01, high.se))
    worst = 0.0
    for a, b in zip(verdicts, verdicts[1:]):
        slack = 2 * math.hypot(a.se, b.se)
        worst = max(worst, b.extinct_fraction - a.extinct_fraction - slack)
    out.append(D.report("extinction.monotone_scan",
                        {**params, "fractions": [v.extinct_fraction for v in verdicts]},
                        worst, 0.0, worst <= 0.0))
    return out


def oracle(quick: bool = False) -> list[dict]:
    """Prefix-sum aggregates against direct summation on random cases."""
    rng = np.random.default_rng(SEED)
    cases = 20 if quick else 100
    e_sbm = e_fv = 0.0
    for _ in range(cases):
        nu = int(rng.integers(2, 65))
        inc = rng.standard_normal(nu)
        sig = rng.uniform(0.0, 3.0, nu)
        S = aggregate_sbm_block(inc[None], sig)[0]
        direct = np.array([sum(math.sqrt(sig[k]) * inc[k] for k in range(j)) for j in range(nu + 1)])
        e_sbm = max(e_sbm, float(np.max(np.abs(S - direct))))
        n = int(rng.integers(2, 25))
        inc2 = rng.standard_normal((n, n))
        gam = rng.uniform(0.0, 3.0, (n, n))
        S2 = aggregate_fv_block(inc2[None], gam)[0]
        direct2 = np.array([sum(math.sqrt(gam[a, b]) * inc2[a, b] for a in range(j) for b in range(j, n))
                            for j in range(n + 1)])
        e_fv = max(e_fv, float(np.max(np.abs(S2 - direct2))))
    return [D.report("oracle.aggregate_sbm", {"cases": cases}, e_sbm, 1e-12, e_sbm <= 1e-12),
            D.report("oracle.aggregate_fv", {"cases": cases}, e_fv, 1e-12, e_fv <= 1e-12)]


def _bump(grid: SpatialGrid) -> np.ndarray:
    f = np.exp(-grid.x**2)
    f[:2] = f[-2:] = 0.0
    return f


def weakform(quick: bool = False) -> list[dict]:
    grid = ref_grid()
    rec = run(ref_initial(grid), ref_sbm(), SchemeConfig(1e-4, record_noise=True), SeedSpec(SEED), 50e-4)
    res = D.weak_form_residual(rec, _bump(grid))
    params = {"steps": rec.n_steps, "max_projection": float(np.max(np.abs(res.projection)))}
    return [D.report("weakform.net_residual", params, res.max_net, 1e-10, res.max_net <= 1e-10)]


def density(quick: bool = False) -> list[dict]:
    replicas = 4 if quick else 16
    coarse, fine = D.density_refinement(ref_initial(), ref_sbm(), SchemeConfig(1e-4), SEED, replicas, 0.1)
    params = {"replicas": replicas, "nx": REF_GRID[2], "dt": 1e-4, "t": 0.1}
    return [D.report("density.relative_l1", params, coarse, 0.05, coarse <= 0.05),
            D.report("density.half_dt_relative_l1", {**params, "dt": 5e-5}, fine, coarse, fine <= coarse)]


def _digest(write, *args) -> str:
    """sha256 of what ``write(*args, path)`` produces, via a temporary file."""
    import os
    import tempfile

    fd, path = tempfile.mkstemp()
    os.close(fd)
    try:
        write(*args, path)
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()
    finally:
        os.unlink(path)


def determinism(quick: bool = False) -> list[dict]:
    """Data files from repeated runs at different worker counts must be byte-identical."""
    grid = SpatialGrid(-6.0, 6.0, 64)
    model = SbmModel(LevelGrid(8.0, 64), gamma_prime=0.5)
    Y0 = ref_initial(grid)
    cfg = SchemeConfig(1e-3, snapshot_stride=10)
    digests: dict[str, set] = {"snapshots": set(), "mass": set(), "verdicts": set()}
    for workers in (1, 2, 4):
        rec = run(Y0, model, cfg, SeedSpec(SEED, 3), 0.2)
        digests["snapshots"].add(_digest(write_snapshots_csv, rec))
        summ = run_ensemble(Y0, model, cfg, SEED, 8, 0.2, workers=workers, keep_mass=True)
        rows = [(r, summ.times, summ.mass_series[r]) for r in range(8)]
        digests["mass"].add(_digest(write_mass_csv, rows))
        verdicts = classify_extinction([0.5, 1.5], 1.0, 2.0, 1e-3, 64, SEED, workers=workers)
        digests["verdicts"].add(_digest(write_verdicts_csv, verdicts))
    distinct = max(len(v) for v in digests.values())
    return [D.report("determinism.distinct_digests", {"workers": [1, 2, 4], "files": sorted(digests)},
                     distinct, 1, distinct == 1)]


SUITES = {
    "heat": heat, "martingale": martingale, "qv": qv, "comparison": comparison, "fv": fv,
    "extinction": extinction, "oracle": oracle, "weakform": weakform, "density": density,
    "determinism": determinism,
}


def run_suite(name: str, quick: bool = False) -> list[dict]:
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name](quick)


def to_jsonl(reports) -> str:
    buf = io.StringIO()
    D.write_jsonl(reports, buf)
    return buf.getvalue()
