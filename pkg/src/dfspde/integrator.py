"""Time stepping of the binned distribution-function SPDE.

One step maps the field ``Y`` to

    Y* = Y + (dt/2) L Y + S[bin(Y)]          (explicit drift)
    (I - (dt/2) L) Y* = Y + S[bin(Y)]        (semi-implicit drift)

where ``L`` is the three-point Laplacian with ghost values 0 on the left and
``Y[nx]`` on the right, and ``S`` is the level aggregate of the step's noise
panel. ``Y*`` is pinned at the boundaries, projected onto nondecreasing
sequences, clamped to ``[0, cap]`` and pinned again. The difference between
the final field and ``Y*`` is the projection correction.
"""
from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import MonotoneField, SpatialGrid
from .errors import (DomainError, EnsembleAbort, NumericalBlowup, PreconditionError,
                     TruncationBreach)
from .models import FvModel, Model
from .noise import (NoisePanel1D, NoisePanel2D, SeedSpec, aggregate_fv_block,
                    aggregate_sbm_block, sample_panels)

BREACH_FRACTION = 0.95
DRIFT_MODES = ("explicit", "semi-implicit")

_DEBUG = os.environ.get("DFSPDE_DEBUG", "") not in ("", "0")


@dataclass(frozen=True)
class SchemeConfig:
    dt: float
    drift_mode: str = "explicit"
    record_noise: bool = False
    snapshot_stride: int = 1
    hit_levels: tuple[float, ...] = ()
    mass_floor_rel: float = 1e-4
    chunk_steps: int = 1024

    def __post_init__(self):
        if not (self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.drift_mode not in DRIFT_MODES:
            raise DomainError(f"drift_mode must be one of {DRIFT_MODES}, got {self.drift_mode!r}")
        if int(self.snapshot_stride) != self.snapshot_stride or self.snapshot_stride < 1:
            raise DomainError(f"snapshot_stride must be a positive integer, got {self.snapshot_stride}")
        object.__setattr__(self, "hit_levels", tuple(float(a) for a in self.hit_levels))

    @property
    def implicit(self) -> bool:
        return self.drift_mode == "semi-implicit"

    def cfl_bound(self, grid: SpatialGrid) -> float:
        return 0.5 * grid.dx**2

    def check(self, grid: SpatialGrid) -> None:
        if not self.implicit and self.dt > self.cfl_bound(grid):
            raise DomainError(
                f"CFL bound violated: explicit drift needs dt <= 0.5*dx^2 = {self.cfl_bound(grid):.6g}, got dt={self.dt:g}")


@dataclass(frozen=True)
class StepReport:
    projection_distance: float
    clamp_count: int
    truncation_margin: float


@dataclass
class TrajectoryRecord:
    grid: SpatialGrid
    model: Model
    cfg: SchemeConfig
    times: np.ndarray
    mass: np.ndarray
    snapshot_steps: np.ndarray
    snapshots: np.ndarray
    projection: np.ndarray
    clamps: np.ndarray
    hitting_times: dict[float, float]
    panels: np.ndarray | None = None
    corrections: np.ndarray | None = None
    seed: SeedSpec | None = None

    @property
    def kind(self) -> str:
        return self.model.kind

    @property
    def dt(self) -> float:
        return self.cfg.dt

    @property
    def n_steps(self) -> int:
        return self.mass.shape[0] - 1

    @property
    def snapshot_times(self) -> np.ndarray:
        return self.snapshot_steps * self.cfg.dt

    def field(self, i: int = -1) -> MonotoneField:
        return MonotoneField(self.grid, self.snapshots[i], _mass_cap(self.model), validate=False)


@dataclass
class EnsembleSummary:
    replicas: int
    terminal_mass: np.ndarray
    mean: float
    se: float
    extinct_fraction: float
    mass_floor: float
    hit_times: dict[float, np.ndarray]
    hit_histograms: dict[float, tuple[np.ndarray, np.ndarray]]
    aborted: list[tuple[int, str]] = field(default_factory=list)
    master_seed: int = 0
    mass_series: np.ndarray | None = None
    times: np.ndarray | None = None
    projection_mean: float = 0.0

    @property
    def completed(self) -> int:
        return self.replicas - len(self.aborted)


def _mass_cap(model: Model) -> float:
    return 1.0 if isinstance(model, FvModel) else math.inf


def _cap(model: Model) -> float:
    return min(_mass_cap(model), model.u_max)


def _breach_level(model: Model) -> float:
    return math.inf if isinstance(model, FvModel) else BREACH_FRACTION * model.u_max


def _coefficients(model: Model) -> np.ndarray:
    return model.gamma_bins if isinstance(model, FvModel) else model.sigma_bins


def aggregate_block(model: Model, increments: np.ndarray, coeff: np.ndarray | None = None) -> np.ndarray:
    """Level aggregates for a stack of panels belonging to ``model``."""
    coeff = _coefficients(model) if coeff is None else coeff
    if isinstance(model, FvModel):
        return aggregate_fv_block(increments, coeff)
    return aggregate_sbm_block(increments, coeff)


def _check_states(states: np.ndarray, cap: float) -> None:
    if not np.all(np.isfinite(states)):
        raise NumericalBlowup("non-finite value in recorded state")
    if np.any(states[:, 0] != 0.0):
        raise AssertionError("left boundary pin violated")
    if np.any(np.diff(states, axis=1) < -1e-12):
        raise AssertionError("monotonicity violated")
    if states.min() < 0.0 or states.max() > cap:
        raise AssertionError("field left [0, cap]")


def _check_start(Y: MonotoneField, model: Model, cfg: SchemeConfig) -> None:
    cfg.check(Y.grid)
    Y.check(_cap(model))
    if isinstance(model, FvModel) and Y.values[-1] != 1.0:
        raise PreconditionError(f"Fleming-Viot state must have total mass 1, got {Y.values[-1]}")
    if Y.total_mass >= _breach_level(model):
        raise TruncationBreach(
            f"initial mass {Y.total_mass:g} is at or above {BREACH_FRACTION} * u_max = {_breach_level(model):g}")


def step(Y: MonotoneField, model: Model, panel: NoisePanel1D | NoisePanel2D, cfg: SchemeConfig):
    """Advance one time step with the given noise panel."""
    _check_start(Y, model, cfg)
    inc = np.asarray(panel.increments, dtype=float)
    n = model.levels.nu
    want = (n, n) if isinstance(model, FvModel) else (n,)
    if inc.shape != want:
        raise DomainError(f"panel shape {inc.shape} does not match model levels {want}")
    if panel.dt != cfg.dt:
        raise DomainError(f"panel dt {panel.dt} differs from scheme dt {cfg.dt}")
    S = aggregate_block(model, inc[None])
    y = Y.values.copy()
    mass = np.empty(1)
    proj = np.empty(1)
    clamps = np.empty(1, dtype=np.int64)
    snaps = np.empty((2, y.size))
    status, _ = kernels.evolve(
        y, S, model.levels.du, cfg.dt, Y.grid.dx, cfg.implicit, _cap(model),
        isinstance(model, FvModel), math.inf, 1, 0, mass, proj, clamps,
        np.empty((0, y.size)), snaps)
    if status == kernels.NONFINITE:
        raise NumericalBlowup("non-finite value after step")
    out = MonotoneField(Y.grid, y, _mass_cap(model), validate=_DEBUG)
    report = StepReport(float(proj[0]), int(clamps[0]), float(y[-1] / model.u_max))
    if y[-1] >= _breach_level(model):
        raise TruncationBreach(
            f"total mass {y[-1]:.6g} reached {BREACH_FRACTION} * u_max = {_breach_level(model):.6g}")
    return out, report


def n_steps_for(t_end: float, dt: float) -> int:
    if not (t_end >= dt * (1 - 1e-9)):
        raise DomainError(f"t_end must be >= dt, got t_end={t_end}, dt={dt}")
    return max(1, int(round(t_end / dt)))


def hitting_times(mass: np.ndarray, levels, dt: float) -> dict[float, float]:
    """First time the mass series reaches each level (from whichever side it starts).

    Levels never reached map to ``math.inf``.
    """
    out: dict[float, float] = {}
    m0 = mass[0]
    for a in levels:
        if a == m0:
            out[a] = 0.0
            continue
        hit = mass <= a if a < m0 else mass >= a
        idx = np.flatnonzero(hit)
        out[a] = float(idx[0] * dt) if idx.size else math.inf
    return out


def run(Y0: MonotoneField, model: Model, cfg: SchemeConfig, seed: SeedSpec | None, t_end: float,
        snapshots: bool = True, increments: np.ndarray | None = None) -> TrajectoryRecord:
    """Simulate one trajectory; deterministic in ``seed``.

    ``increments`` replays given noise panels (one per step, already scaled)
    instead of drawing them from ``seed``.

    Raises ``TruncationBreach`` or ``NumericalBlowup``; the exception carries
    the partial record as ``exc.record``.
    """
    _check_start(Y0, model, cfg)
    nsteps = n_steps_for(t_end, cfg.dt)
    grid = Y0.grid
    two_d = isinstance(model, FvModel)
    levels = model.levels
    if increments is not None:
        want = (nsteps, levels.nu, levels.nu) if two_d else (nsteps, levels.nu)
        increments = np.asarray(increments, dtype=float)
        if increments.shape != want:
            raise DomainError(f"increments have shape {increments.shape}, expected {want}")
    elif seed is None:
        raise DomainError("either seed or increments is required")
    coeff = _coefficients(model)
    stride = (1 if _DEBUG else cfg.snapshot_stride) if snapshots else nsteps + 1
    n1 = grid.nx + 1

    y = Y0.values.copy()
    mass = np.empty(nsteps + 1)
    mass[0] = y[-1]
    proj = np.zeros(nsteps)
    clamps = np.zeros(nsteps, dtype=np.int64)
    snaps = np.zeros((nsteps // stride + 1, n1))
    snaps[0] = y
    corr = np.zeros((nsteps, n1)) if cfg.record_noise else np.empty((0, n1))
    panels = None
    if cfg.record_noise:
        shape = (nsteps, levels.nu, levels.nu) if two_d else (nsteps, levels.nu)
        panels = np.empty(shape)

    rng = seed.generator() if increments is None else None
    done = 0
    status = kernels.OK
    while done < nsteps and status == kernels.OK:
        m = min(cfg.chunk_steps, nsteps - done)
        if rng is None:
            inc = increments[done:done + m]
        else:
            inc = sample_panels(rng, levels, cfg.dt, m, two_d)
        if panels is not None:
            panels[done:done + m] = inc
        S = aggregate_block(model, inc, coeff)
        c = corr[done:done + m] if cfg.record_noise else corr
        status, k = kernels.evolve(
            y, S, levels.du, cfg.dt, grid.dx, cfg.implicit, _cap(model), two_d,
            _breach_level(model), stride, done, mass[1 + done:1 + done + m],
            proj[done:done + m], clamps[done:done + m], c, snaps)
        done += k

    steps_kept = done
    snap_steps = np.arange(0, steps_kept + 1, stride)
    snaps = snaps[: snap_steps.size]
    if snap_steps[-1] != steps_kept:
        snap_steps = np.append(snap_steps, steps_kept)
        snaps = np.vstack([snaps, y[None]])
    record = TrajectoryRecord(
        grid=grid, model=model, cfg=cfg,
        times=np.arange(steps_kept + 1) * cfg.dt, mass=mass[: steps_kept + 1],
        snapshot_steps=snap_steps, snapshots=snaps,
        projection=proj[:steps_kept], clamps=clamps[:steps_kept],
        hitting_times=hitting_times(mass[: steps_kept + 1], cfg.hit_levels, cfg.dt),
        panels=None if panels is None else panels[:steps_kept],
        corrections=None if not cfg.record_noise else corr[:steps_kept],
        seed=seed,
    )
    if status == kernels.NONFINITE:
        exc = NumericalBlowup(f"non-finite value at step {steps_kept + 1}")
        exc.record = record
        raise exc
    if status == kernels.BREACH:
        exc = TruncationBreach(
            f"total mass {y[-1]:.6g} reached {BREACH_FRACTION} * u_max = {_breach_level(model):.6g} "
            f"at t = {steps_kept * cfg.dt:.6g}; raise u_max")
        exc.record = record
        raise exc
    _check_states(snaps, _cap(model))
    leak = snaps[:, 1] > 1e-3 * snaps[:, -1]
    if np.any(leak & (snaps[:, -1] > 0)):
        warnings.warn("Y(x_1) exceeded 1e-3 of total mass; widen the domain on the left",
                      RuntimeWarning, stacklevel=2)
    return record


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("DFSPDE_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def _moments(x: np.ndarray) -> tuple[float, float]:
    """Mean and standard error; shifted so identical samples give SE exactly 0."""
    n = x.size
    if n == 0:
        return math.nan, math.nan
    d = x - x[0]
    mean = float(x[0] + np.sum(d) / n)
    if n == 1:
        return mean, math.nan
    dd = d - np.sum(d) / n
    return mean, float(np.sqrt(np.sum(dd * dd) / (n - 1) / n))


def run_ensemble(Y0: MonotoneField, model: Model, cfg: SchemeConfig, master_seed: int,
                 replicas: int, t_end: float, workers: int | None = None,
                 keep_mass: bool = False, abort_tolerance: float = 0.01) -> EnsembleSummary:
    """Independent replicas ``SeedSpec(master_seed, r)`` for ``r < replicas``.

    Per-replica results are stored by index before any reduction, so the
    summary does not depend on the number of workers or their scheduling.
    """
    if replicas < 1:
        raise DomainError(f"replicas must be >= 1, got {replicas}")
    _check_start(Y0, model, cfg)
    nsteps = n_steps_for(t_end, cfg.dt)
    cfg_run = SchemeConfig(cfg.dt, cfg.drift_mode, False, cfg.snapshot_stride, cfg.hit_levels,
                           cfg.mass_floor_rel, cfg.chunk_steps)
    terminal = np.full(replicas, np.nan)
    hits = {a: np.full(replicas, np.inf) for a in cfg.hit_levels}
    series = np.full((replicas, nsteps + 1), np.nan) if keep_mass else None
    proj_means = np.full(replicas, np.nan)
    aborts: dict[int, str] = {}

    def one(r: int) -> None:
        try:
            rec = run(Y0, model, cfg_run, SeedSpec(master_seed, r), t_end, snapshots=False)
        except (TruncationBreach, NumericalBlowup) as exc:
            aborts[r] = f"{type(exc).__name__}: {exc}"
            return
        terminal[r] = rec.mass[-1]
        proj_means[r] = float(np.mean(rec.projection))
        for a, t in rec.hitting_times.items():
            hits[a][r] = t
        if series is not None:
            series[r] = rec.mass

    nw = worker_count(workers)
    if nw == 1:
        for r in range(replicas):
            one(r)
    else:
        with ThreadPoolExecutor(nw) as pool:
            list(pool.map(one, range(replicas)))

    aborted = sorted(aborts.items())
    ok = np.isfinite(terminal)
    mean, se = _moments(terminal[ok])
    floor = cfg.mass_floor_rel * Y0.total_mass
    edges = np.linspace(0.0, nsteps * cfg.dt, 21)
    hist = {a: np.histogram(h[np.isfinite(h)], bins=edges) for a, h in hits.items()}
    summary = EnsembleSummary(
        replicas=replicas, terminal_mass=terminal, mean=mean, se=se,
        extinct_fraction=float(np.mean(terminal[ok] <= floor)) if ok.any() else math.nan,
        mass_floor=floor, hit_times=hits, hit_histograms=hist, aborted=aborted,
        master_seed=master_seed, mass_series=series,
        times=np.arange(nsteps + 1) * cfg.dt if keep_mass else None,
        projection_mean=float(np.mean(proj_means[ok])) if ok.any() else math.nan,
    )
    if len(aborted) > abort_tolerance * replicas:
        exc = EnsembleAbort(f"{len(aborted)} of {replicas} replicas aborted; first: {aborted[0][1]}")
        exc.summary = summary
        raise exc
    return summary


def _fmt(v) -> str:
    return f"{v:.17g}"


def write_snapshots_csv(record: TrajectoryRecord, path) -> None:
    x = record.grid.x
    xs = [_fmt(v) for v in x]
    with open(path, "w") as fh:
        fh.write("t,x,Y\n")
        for t, row in zip(record.snapshot_times, record.snapshots):
            ts = _fmt(t)
            fh.write("".join(f"{ts},{xi},{_fmt(v)}\n" for xi, v in zip(xs, row)))


def write_mass_csv(rows, path) -> None:
    """``rows`` is an iterable of ``(replica, times, mass)`` triples."""
    with open(path, "w") as fh:
        fh.write("replica,t,mass\n")
        for r, times, mass in rows:
            fh.write("".join(f"{r},{_fmt(t)},{_fmt(m)}\n" for t, m in zip(times, mass)))
