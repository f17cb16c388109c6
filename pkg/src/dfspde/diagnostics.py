"""Statistical and bookkeeping checks run on trajectories and ensembles."""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr
from scipy.stats import ks_2samp

from .core import MonotoneField, inverse_index, to_measure
from .errors import DomainError, PreconditionError
from .integrator import (EnsembleSummary, SchemeConfig, TrajectoryRecord, _coefficients, n_steps_for, run)
from .mass_sde import MassEnsemble, MassPath
from .models import FvModel, Model, SbmModel
from .noise import SeedSpec, sample_panels


@dataclass
class MartingaleTestResult:
    target: float
    mean: float
    se: float
    z: float
    passed: bool
    n: int = 0


def mass_martingale_test(summary: EnsembleSummary | MassEnsemble | np.ndarray, target: float,
                         min_replicas: int = 100, k: float = 3.0) -> MartingaleTestResult:
    """z-score of the terminal-mass mean against ``target``; passes iff ``|z| <= k``."""
    if isinstance(summary, EnsembleSummary):
        x = summary.terminal_mass[np.isfinite(summary.terminal_mass)]
    elif isinstance(summary, MassEnsemble):
        x = summary.terminal
    else:
        x = np.asarray(summary, dtype=float)
    if x.size < min_replicas:
        raise PreconditionError(f"need at least {min_replicas} replicas, got {x.size}")
    from .integrator import _moments

    mean, se = _moments(x)
    if se == 0.0:
        z = 0.0 if mean == target else math.inf
    else:
        z = (mean - target) / se
    return MartingaleTestResult(target, mean, se, z, abs(z) <= k, int(x.size))


def qv_relative_error(mass: np.ndarray, dt: float, model: SbmModel) -> float:
    """``|sum (dm)^2 - sum sigma_0(m_n) dt| / sum sigma_0(m_n) dt`` (0 when both vanish)."""
    mass = np.asarray(mass, dtype=float)
    realized = float(np.sum(np.diff(mass) ** 2))
    predicted = float(np.sum(model.sigma0(np.maximum(mass[:-1], 0.0))) * dt)
    if predicted == 0.0:
        return 0.0 if realized == 0.0 else math.inf
    return abs(realized - predicted) / predicted


def qv_test(record: TrajectoryRecord | MassPath, model: SbmModel) -> float:
    if not isinstance(model, SbmModel):
        raise DomainError("quadratic-variation test applies to super-Brownian models")
    if isinstance(record, MassPath):
        return qv_relative_error(record.Z, record.dt, model)
    return qv_relative_error(record.mass, record.dt, model)


def qv_two_sample(errors_a, errors_b) -> float:
    """Two-sample Kolmogorov-Smirnov p-value."""
    return float(ks_2samp(np.asarray(errors_a), np.asarray(errors_b)).pvalue)


def _require_full_record(record: TrajectoryRecord) -> None:
    if record.panels is None or record.corrections is None:
        raise PreconditionError("record has no stored noise; run with record_noise=True")
    if record.cfg.snapshot_stride != 1 or record.snapshots.shape[0] != record.n_steps + 1:
        raise PreconditionError("record needs a snapshot at every step (snapshot_stride=1)")


def node_noise(record: TrajectoryRecord, n: int) -> np.ndarray:
    """Noise added at every node in step ``n``, by direct summation over bins."""
    y = record.snapshots[n]
    model = record.model
    du = model.levels.du
    nu = model.levels.nu
    coeff = np.sqrt(_coefficients(model))
    k = np.arange(nu)
    if isinstance(model, FvModel):
        j = np.clip(np.floor(y / du), 0, nu).astype(np.int64)
        M = coeff * record.panels[n]
        below = k[None, :] < j[:, None]
        above = k[None, :] >= j[:, None]
        return np.einsum("ia,ab,ib->i", below.astype(float), M, above.astype(float))
    below = (y[:, None] / du) >= (k[None, :] + 1)
    return below.astype(float) @ (coeff * record.panels[n])


def second_difference(f: np.ndarray, dx: float) -> np.ndarray:
    """Three-point second difference with zero padding."""
    g = np.zeros_like(f)
    g[1:-1] = (f[:-2] - 2.0 * f[1:-1] + f[2:]) / dx**2
    g[0] = (f[1] - 2.0 * f[0]) / dx**2
    g[-1] = (f[-2] - 2.0 * f[-1]) / dx**2
    return g


@dataclass
class WeakFormResidual:
    raw: np.ndarray
    projection: np.ndarray

    @property
    def net(self) -> np.ndarray:
        return self.raw - self.projection

    @property
    def max_net(self) -> float:
        return float(np.max(np.abs(self.net))) if self.net.size else 0.0


def weak_form_residual(record: TrajectoryRecord, f, f2=None) -> WeakFormResidual:
    """Per-step residual of the discrete weak form against test function ``f``.

    ``raw[n] = <Y_{n+1} - Y_n, f> - (dt/2) <Y_drift, f''> - <noise_n, f>``
    and ``projection[n] = <correction_n, f>``. ``f''`` defaults to the
    discrete second difference, making the drift pairing exact by summation by
    parts when ``f`` vanishes on the two outermost nodes at each end.
    """
    _require_full_record(record)
    grid = record.grid
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.nx + 1,):
        raise DomainError(f"test function has shape {f.shape}, expected {(grid.nx + 1,)}")
    if f2 is None:
        f2 = second_difference(f, grid.dx)
    f2 = np.asarray(f2, dtype=float)
    w = np.full(grid.nx + 1, grid.dx)
    w[0] = w[-1] = 0.5 * grid.dx
    wf = w * f
    wf2 = w * f2
    Y = record.snapshots
    corr = record.corrections
    implicit = record.cfg.implicit
    raw = np.empty(record.n_steps)
    for n in range(record.n_steps):
        drift_field = (Y[n + 1] - corr[n]) if implicit else Y[n]
        raw[n] = (wf @ (Y[n + 1] - Y[n]) - 0.5 * record.dt * (wf2 @ drift_field)
                  - wf @ node_noise(record, n))
    proj = corr @ wf
    return WeakFormResidual(raw, proj)


@dataclass
class ComparisonReport:
    violation_fraction: float
    max_violation: float
    samples: int
    eps: float
    coupled: bool = True
    replicas: int = 1


def _violations(low: TrajectoryRecord, high: TrajectoryRecord, eps: float):
    d = low.snapshots[1:] - high.snapshots[1:]
    bad = d > eps
    return int(bad.sum()), int(d.size), float(max(0.0, d.max())) if d.size else 0.0


def _check_ordered(Y_low: MonotoneField, Y_high: MonotoneField) -> None:
    if np.any(Y_low.values > Y_high.values):
        raise PreconditionError("initial data must satisfy Y_low <= Y_high at every node")


def comparison_test(Y_low: MonotoneField, Y_high: MonotoneField, model: Model, cfg: SchemeConfig,
                    seed: SeedSpec, t_end: float) -> ComparisonReport:
    """Run both initial conditions on the same noise and count ordering violations."""
    _check_ordered(Y_low, Y_high)
    eps = 1e-6 * model.u_max
    lo = run(Y_low, model, cfg, seed, t_end)
    hi = run(Y_high, model, cfg, seed, t_end)
    bad, total, worst = _violations(lo, hi, eps)
    return ComparisonReport(bad / total if total else 0.0, worst, total, eps)


def comparison_ensemble(Y_low: MonotoneField, Y_high: MonotoneField, model: Model,
                        cfg: SchemeConfig, master_seed: int, replicas: int,
                        t_end: float) -> ComparisonReport:
    """Pooled violation fraction over coupled replica pairs."""
    _check_ordered(Y_low, Y_high)
    eps = 1e-6 * model.u_max
    bad = total = 0
    worst = 0.0
    for r in range(replicas):
        seed = SeedSpec(master_seed, r)
        b, t, w = _violations(run(Y_low, model, cfg, seed, t_end),
                              run(Y_high, model, cfg, seed, t_end), eps)
        bad += b
        total += t
        worst = max(worst, w)
    return ComparisonReport(bad / total if total else 0.0, worst, total, eps, True, replicas)


def refined_increments(seed: SeedSpec, model: Model, dt: float, nsteps: int):
    """Noise for ``2 * nsteps`` steps of ``dt / 2`` and the same noise summed pairwise.

    The pair drives one Brownian sheet at two time resolutions, so a
    refinement study compares schemes instead of noise realizations.
    """
    two_d = isinstance(model, FvModel)
    fine = sample_panels(seed.generator(), model.levels, 0.5 * dt, 2 * nsteps, two_d)
    return fine[0::2] + fine[1::2], fine


def _half_dt(cfg: SchemeConfig) -> SchemeConfig:
    return replace(cfg, dt=0.5 * cfg.dt, snapshot_stride=2 * cfg.snapshot_stride)


def comparison_refinement(Y_low: MonotoneField, Y_high: MonotoneField, model: Model,
                          cfg: SchemeConfig, master_seed: int, replicas: int, t_end: float
                          ) -> tuple[ComparisonReport, ComparisonReport]:
    """Pooled comparison reports at ``dt`` and ``dt / 2`` on refined, shared noise.

    Both resolutions are sampled at the same times.
    """
    _check_ordered(Y_low, Y_high)
    eps = 1e-6 * model.u_max
    nsteps = n_steps_for(t_end, cfg.dt)
    fine_cfg = _half_dt(cfg)
    tally = np.zeros((2, 2), dtype=np.int64)
    worst = [0.0, 0.0]
    for r in range(replicas):
        coarse, fine = refined_increments(SeedSpec(master_seed, r), model, cfg.dt, nsteps)
        for i, (c, inc) in enumerate(((cfg, coarse), (fine_cfg, fine))):
            b, t, w = _violations(run(Y_low, model, c, None, t_end, increments=inc),
                                  run(Y_high, model, c, None, t_end, increments=inc), eps)
            tally[i] += (b, t)
            worst[i] = max(worst[i], w)
    return tuple(ComparisonReport(tally[i, 0] / tally[i, 1], worst[i], int(tally[i, 1]), eps, True,
                                  replicas) for i in range(2))


class HeatKernel:
    """Brownian transition density ``p_t`` and its action on grid functions."""

    @staticmethod
    def density(t: float, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.exp(-(x * x) / (2.0 * t)) / math.sqrt(2.0 * math.pi * t)

    @staticmethod
    def cell_kernel(t: float, dx: float, half_width: int) -> np.ndarray:
        """Average of ``p_t`` over cells at offsets ``-half_width..half_width``."""
        d = np.arange(-half_width, half_width + 1)
        s = math.sqrt(t)
        return (ndtr((d + 0.5) * dx / s) - ndtr((d - 0.5) * dx / s)) / dx

    @classmethod
    def apply(cls, t: float, f, dx: float) -> np.ndarray:
        """``P_t f`` on a uniform grid by discrete convolution (zero outside the grid)."""
        f = np.asarray(f, dtype=float)
        n = f.size
        k = cls.density(t, dx * np.arange(-(n - 1), n))
        return np.convolve(f, k, mode="full")[n - 1: 2 * n - 1] * dx


@dataclass
class DensityEstimate:
    x: np.ndarray
    finite_difference: np.ndarray
    mild: np.ndarray
    total_mass: float
    dx: float

    @property
    def discrepancy(self) -> float:
        return float(np.sum(np.abs(self.finite_difference - self.mild)) * self.dx)

    @property
    def relative_discrepancy(self) -> float:
        return self.discrepancy / self.total_mass if self.total_mass > 0 else math.inf


def _noise_atoms(record: TrajectoryRecord, n: int):
    """Cell indices and weights of the noise measure added in step ``n``."""
    model = record.model
    y = record.snapshots[n]
    du = model.levels.du
    nu = model.levels.nu
    nx = record.grid.nx
    coeff = np.sqrt(_coefficients(model))
    # node q(l) = first node with Y >= l du; its cell is (x_{q-1}, x_q]
    q = inverse_index(y, du * np.arange(1, nu + 1))
    if isinstance(model, FvModel):
        M = coeff * record.panels[n]
        a_rows = M.sum(axis=1)  # +atom at q(A + 1)
        b_cols = M.sum(axis=0)  # -atom at q(B + 1)
        cells = np.concatenate((q, q)) - 1
        weights = np.concatenate((a_rows, -b_cols))
    else:
        cells = q - 1
        weights = coeff * record.panels[n]
    keep = (cells >= 0) & (cells < nx)
    return np.bincount(cells[keep], weights=weights[keep], minlength=nx)


def density_reconstruct(record: TrajectoryRecord, model: Model | None = None,
                        t: float | None = None) -> DensityEstimate:
    """Finite-difference density of ``Y_t`` and its mild-form reconstruction.

    The mild form propagates the initial measure and every step's noise
    atoms with the cell-averaged heat kernel. A step starting at ``s`` is
    propagated for ``t - s - dt/2``, so the newest noise still gets half a
    step of smoothing.
    """
    _require_full_record(record)
    model = record.model if model is None else model
    dt = record.dt
    N = record.n_steps if t is None else int(round(t / dt))
    if N < 10:
        raise PreconditionError(f"t must be at least 10 dt, got {N} steps")
    if N > record.n_steps:
        raise PreconditionError(f"record stops at step {record.n_steps}, asked for {N}")
    grid = record.grid
    nx = grid.nx
    fd = np.diff(record.snapshots[N]) / grid.dx

    def propagate(w, tau):
        k = HeatKernel.cell_kernel(tau, grid.dx, nx - 1)
        return np.convolve(w, k, mode="full")[nx - 1: 2 * nx - 1]

    mild = propagate(to_measure(record.field(0)), N * dt)
    for n in range(N):
        w = _noise_atoms(record, n)
        if np.any(w):
            mild += propagate(w, (N - n - 0.5) * dt)
    return DensityEstimate(grid.cell_centers, fd, mild, float(record.snapshots[N][-1]), grid.dx)


def density_refinement(Y0: MonotoneField, model: Model, cfg: SchemeConfig, master_seed: int,
                       replicas: int, t: float) -> tuple[float, float]:
    """Pooled relative L1 discrepancy at ``dt`` and ``dt / 2`` on refined, shared noise.

    Each value is the summed discrepancy over replicas divided by the summed
    terminal mass.
    """
    nsteps = n_steps_for(t, cfg.dt)
    cfgs = (replace(cfg, record_noise=True, snapshot_stride=1),
            replace(cfg, dt=0.5 * cfg.dt, record_noise=True, snapshot_stride=1))
    disc = np.zeros(2)
    mass = np.zeros(2)
    for r in range(replicas):
        incs = refined_increments(SeedSpec(master_seed, r), model, cfg.dt, nsteps)
        for i in range(2):
            est = density_reconstruct(run(Y0, model, cfgs[i], None, t, increments=incs[i]))
            disc[i] += est.discrepancy
            mass[i] += est.total_mass
    out = disc / mass
    return float(out[0]), float(out[1])


def fv_conservation_check(record: TrajectoryRecord) -> tuple[bool, float]:
    if not isinstance(record.model, FvModel):
        raise DomainError("conservation check applies to Fleming-Viot records")
    dev = max(float(np.max(np.abs(record.snapshots[:, -1] - 1.0))),
              float(np.max(np.abs(record.mass - 1.0))))
    return dev == 0.0, dev


def reference_heat_solve(Y0: MonotoneField, dt: float, nsteps: int, pin_right: bool = False) -> np.ndarray:
    """Zero-noise semi-implicit solve with LAPACK's banded solver (no projection)."""
    y = Y0.values.copy()
    nx = Y0.grid.nx
    lam = dt / (2.0 * Y0.grid.dx**2)
    ab = np.zeros((3, nx))
    ab[0, 1:] = -lam
    ab[1, :] = 1.0 + 2.0 * lam
    ab[1, -1] = 1.0 + lam
    ab[2, :-1] = -lam
    for _ in range(nsteps):
        y[1:] = solve_banded((1, 1), ab, y[1:])
        y[0] = 0.0
        if pin_right:
            y[-1] = 1.0
    return y


def report(test: str, params: dict, statistic: float, threshold: float, passed: bool,
           se: float | None = None) -> dict:
    return {"test": test, "params": params, "statistic": _jsonable(statistic),
            "se": _jsonable(se), "threshold": _jsonable(threshold), "pass": bool(passed)}


def _jsonable(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else str(v)


def write_jsonl(reports, fh=None) -> None:
    fh = sys.stdout if fh is None else fh
    for r in reports:
        fh.write(json.dumps(r, sort_keys=True) + "\n")
