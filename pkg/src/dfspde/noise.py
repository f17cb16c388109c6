"""Discretized space-time white noise and its level aggregates.

A panel holds one time step of Gaussian increments over the level bins
(super-Brownian case, ``E = R_+``) or over the square of level bins
(Fleming-Viot case, ``E = [0, 1]^2``). A level aggregate ``S`` turns the
panel into the increment seen by a spatial node whose field value sits in
level bin ``j``:

* super-Brownian: ``S[j] = sum_{k < j} sqrt(sigma(u_k)) dW_k``, i.e. every
  bin lying entirely below the level ``j du`` contributes;
* Fleming-Viot: ``S[j] = sum_{a < j <= b} sqrt(gamma(a, b)) dW_{a,b}``, the
  bins with ``a``-bin below and ``b``-bin above the level ``j du``.

Both have ``S[0] = 0`` and the Fleming-Viot one also has ``S[nu] = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import LevelGrid
from .errors import DomainError


@dataclass(frozen=True)
class SeedSpec:
    """Per-replica random stream derived from a master seed.

    The stream is a Philox counter-based generator keyed by hashing
    ``(master_seed, replica_index)`` through ``SeedSequence``, so any replica
    can be regenerated alone, in any order, on any worker.
    """

    master_seed: int
    replica_index: int = 0

    def __post_init__(self):
        if not (0 <= int(self.master_seed) < 2**64):
            raise DomainError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if int(self.replica_index) < 0:
            raise DomainError(f"replica_index must be >= 0, got {self.replica_index}")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.master_seed), spawn_key=(int(self.replica_index),))
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class NoisePanel1D:
    increments: np.ndarray
    dt: float


@dataclass(frozen=True)
class NoisePanel2D:
    increments: np.ndarray
    dt: float


@dataclass(frozen=True)
class LevelAggregate:
    S: np.ndarray


def _check_dt(dt: float) -> None:
    if not (dt > 0):
        raise DomainError(f"dt must be positive, got {dt}")


def panel_scale(levels: LevelGrid, dt: float, two_d: bool) -> float:
    """Standard deviation of one panel entry."""
    cell = levels.du * levels.du if two_d else levels.du
    return float(np.sqrt(dt * cell))


def sample_panels(rng: np.random.Generator, levels: LevelGrid, dt: float, nsteps: int,
                  two_d: bool = False) -> np.ndarray:
    """Draw ``nsteps`` consecutive panels as one array.

    Draws are taken in time-major order, so consecutive calls continue the
    same sequence a single large call would produce.
    """
    _check_dt(dt)
    shape = (nsteps, levels.nu, levels.nu) if two_d else (nsteps, levels.nu)
    return rng.standard_normal(shape) * panel_scale(levels, dt, two_d)


def sample_panel(rng: np.random.Generator, levels: LevelGrid, dt: float, two_d: bool = False):
    inc = sample_panels(rng, levels, dt, 1, two_d)[0]
    return NoisePanel2D(inc, dt) if two_d else NoisePanel1D(inc, dt)


def _nonnegative(table: np.ndarray, name: str) -> np.ndarray:
    table = np.asarray(table, dtype=float)
    if np.any(table < 0) or not np.all(np.isfinite(table)):
        raise DomainError(f"{name} table must be finite and nonnegative")
    return table


def aggregate_sbm_block(increments: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Prefix sums for a stack of panels, shape ``(m, nu) -> (m, nu + 1)``."""
    sigma = _nonnegative(sigma, "sigma")
    inc = np.asarray(increments, dtype=float)
    if inc.shape[-1] != sigma.shape[0]:
        raise DomainError(f"panel has {inc.shape[-1]} bins, sigma table has {sigma.shape[0]}")
    out = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc * np.sqrt(sigma), axis=-1, out=out[..., 1:])
    return out


def aggregate_fv_block(increments: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """Rectangle sums for a stack of panels, shape ``(m, n, n) -> (m, n + 1)``.

    One suffix cumsum over ``b`` and one prefix cumsum over ``a``; level ``j``
    then reads the diagonal entry ``C[j - 1, j]``.
    """
    gamma = _nonnegative(gamma, "gamma")
    inc = np.asarray(increments, dtype=float)
    n = gamma.shape[0]
    if gamma.shape != (n, n) or inc.shape[-2:] != (n, n):
        raise DomainError(f"panel {inc.shape[-2:]} and gamma {gamma.shape} must be the same square")
    m = inc * np.sqrt(gamma)
    suffix = np.zeros(inc.shape[:-1] + (n + 1,))
    suffix[..., :n] = np.flip(np.cumsum(np.flip(m, axis=-1), axis=-1), axis=-1)
    C = np.cumsum(suffix, axis=-2)
    out = np.zeros(inc.shape[:-2] + (n + 1,))
    out[..., 1:] = C[..., np.arange(n), np.arange(1, n + 1)]
    return out


def aggregate_sbm(panel: NoisePanel1D, sigma) -> LevelAggregate:
    return LevelAggregate(aggregate_sbm_block(panel.increments, sigma))


def aggregate_fv(panel: NoisePanel2D, gamma) -> LevelAggregate:
    return LevelAggregate(aggregate_fv_block(panel.increments, gamma))
