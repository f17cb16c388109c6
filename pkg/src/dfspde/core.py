"""Grids, monotone field states and the elementary operations on them."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError

# invariant checks allow this much float slack
_TOL = 1e-12


@dataclass(frozen=True)
class SpatialGrid:
    """Uniform grid of ``nx + 1`` nodes on ``[x_min, x_max]``."""

    x_min: float
    x_max: float
    nx: int

    def __post_init__(self):
        if not (self.x_min < self.x_max):
            raise DomainError(f"x_min must be < x_max, got {self.x_min} >= {self.x_max}")
        if int(self.nx) != self.nx or self.nx < 4:
            raise DomainError(f"nx must be an integer >= 4, got {self.nx}")
        object.__setattr__(self, "nx", int(self.nx))

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx + 1)

    @property
    def cell_centers(self) -> np.ndarray:
        return self.x[:-1] + 0.5 * self.dx

    @property
    def beyond(self) -> float:
        """Sentinel position standing for +infinity."""
        return self.x_max + self.dx


@dataclass(frozen=True)
class LevelGrid:
    """Mass-level bins ``[k du, (k+1) du)`` for ``k < nu`` on ``[0, u_max]``.

    For Fleming-Viot the same bins are used on both axes of ``[0, 1]^2``.
    """

    u_max: float
    nu: int

    def __post_init__(self):
        if not (self.u_max > 0) or not math.isfinite(self.u_max):
            raise DomainError(f"u_max must be positive and finite, got {self.u_max}")
        if int(self.nu) != self.nu or self.nu < 2:
            raise DomainError(f"nu must be an integer >= 2, got {self.nu}")
        object.__setattr__(self, "nu", int(self.nu))

    @property
    def du(self) -> float:
        return self.u_max / self.nu

    @property
    def midpoints(self) -> np.ndarray:
        return (np.arange(self.nu) + 0.5) * self.du

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.nu + 1) * self.du

    def bin_index(self, y) -> np.ndarray:
        """``floor(y / du)`` clamped to ``[0, nu]``."""
        return np.clip(np.floor(np.asarray(y, dtype=float) / self.du), 0, self.nu).astype(np.int64)


@dataclass(frozen=True)
class MonotoneField:
    """Distribution function sampled at the nodes of a spatial grid.

    ``values[0]`` is pinned to 0 (the grid's left end stands for minus
    infinity), values are nondecreasing and lie in ``[0, mass_cap]``.
    ``mass_cap`` is ``inf`` for unconstrained super-Brownian states.
    """

    grid: SpatialGrid
    values: np.ndarray
    mass_cap: float = math.inf
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.nx + 1,):
            raise DomainError(f"expected {self.grid.nx + 1} values, got shape {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.validate:
            self.check()

    def check(self, cap: float | None = None) -> None:
        v = self.values
        cap = self.mass_cap if cap is None else cap
        if not np.all(np.isfinite(v)):
            raise DomainError("field contains non-finite values")
        if v[0] != 0.0:
            raise DomainError(f"left boundary must be 0, got {v[0]}")
        if np.any(np.diff(v) < -_TOL):
            raise DomainError("field is not nondecreasing")
        if v.min() < -_TOL or v.max() > cap + _TOL:
            raise DomainError(f"field leaves [0, {cap}]")

    @property
    def total_mass(self) -> float:
        return float(self.values[-1])

    def left_leak(self) -> float:
        """Y(x_1) relative to total mass; large values mean the domain is too narrow."""
        m = self.total_mass
        return float(self.values[1] / m) if m > 0 else 0.0

    def warn_if_leaking(self, threshold: float = 1e-3) -> None:
        if self.left_leak() > threshold:
            warnings.warn(
                f"Y(x_1) = {self.values[1]:.3g} exceeds {threshold:g} of total mass; "
                "widen the domain on the left",
                RuntimeWarning,
                stacklevel=2,
            )

    @classmethod
    def gaussian_cdf(cls, grid: SpatialGrid, mu: float = 0.0, s: float = 1.0, mass: float = 1.0,
                     mass_cap: float = math.inf):
        from scipy.special import ndtr

        v = mass * ndtr((grid.x - mu) / s)
        v[0] = 0.0
        return cls(grid, v, mass_cap)

    @classmethod
    def step(cls, grid: SpatialGrid, location: float = 0.0, mass: float = 1.0,
             mass_cap: float = math.inf):
        v = np.where(grid.x >= location, mass, 0.0)
        v[0] = 0.0
        return cls(grid, v, mass_cap)

    @classmethod
    def zeros(cls, grid: SpatialGrid, mass_cap: float = math.inf):
        return cls(grid, np.zeros(grid.nx + 1), mass_cap)


def generalized_inverse(Y: MonotoneField, u: float) -> float:
    """Smallest node ``x_i`` with ``Y(x_i) >= u``.

    Returns ``grid.beyond`` (standing for +infinity) when no node qualifies.
    """
    if u < 0 or math.isnan(u):
        raise DomainError(f"level must be >= 0, got {u}")
    i = int(np.searchsorted(Y.values, u, side="left"))
    if i > Y.grid.nx:
        return Y.grid.beyond
    return float(Y.grid.x[i])


def inverse_index(values: np.ndarray, levels) -> np.ndarray:
    """Vectorized node index of the generalized inverse; ``nx + 1`` encodes +infinity."""
    return np.searchsorted(values, np.asarray(levels, dtype=float), side="left")


def to_measure(Y: MonotoneField) -> np.ndarray:
    """Atom weights ``Y(x_i) - Y(x_{i-1})`` of the cells ``(x_{i-1}, x_i]``."""
    return np.diff(Y.values)


def from_measure(weights, grid: SpatialGrid, mass_cap: float = math.inf) -> MonotoneField:
    w = np.asarray(weights, dtype=float)
    if w.shape != (grid.nx,):
        raise DomainError(f"expected {grid.nx} weights, got shape {w.shape}")
    if np.any(w < 0):
        raise DomainError("measure weights must be nonnegative")
    return MonotoneField(grid, np.concatenate(([0.0], np.cumsum(w))), mass_cap)


def pair(Y: MonotoneField, f) -> float:
    """Trapezoid approximation of the integral of ``Y * f``."""
    f = np.asarray(f, dtype=float)
    if f.shape != Y.values.shape:
        raise DomainError(f"test function has shape {f.shape}, field has {Y.values.shape}")
    return float(np.trapezoid(Y.values * f, dx=Y.grid.dx))


def isotonic_project(v) -> np.ndarray:
    """L2 projection onto nondecreasing sequences (pool adjacent violators)."""
    v = np.ascontiguousarray(v, dtype=float)
    if v.ndim != 1:
        raise DomainError("isotonic_project expects a 1-D array")
    if v.size == 0:
        return v.copy()
    if not np.all(np.isfinite(v)):
        raise DomainError("isotonic_project requires finite entries")
    return kernels.pava(v)


def weighted_norm(f, grid: SpatialGrid) -> float:
    """Trapezoid of ``|f(x)| exp(-|x|)`` over the grid."""
    f = np.asarray(f, dtype=float)
    if f.shape != (grid.nx + 1,):
        raise DomainError(f"expected {grid.nx + 1} samples, got shape {f.shape}")
    return float(np.trapezoid(np.abs(f) * np.exp(-np.abs(grid.x)), dx=grid.dx))
