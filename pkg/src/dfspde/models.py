"""Coefficient families and numeric checks of their hypotheses.

Two concrete noise-coefficient families are supported:

* interacting super-Brownian motion on ``E = R_+`` with
  ``G(u, x) = 1{u <= x} sqrt(sigma(u))``;
* interacting Fleming-Viot on ``E = [0, 1]^2`` with
  ``G(a, b, x) = 1{a <= x <= b} sqrt(gamma(a, b))``.

For either family ``variance_rate(model, v)`` is ``int_E G(u, v)^2 pi(du)``,
which for super-Brownian motion is the integrated branching rate
``sigma_0(v) = int_0^v sigma``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import LevelGrid
from .errors import DomainError

COEFF_HEADER = "# dfspde-coeff v1"


def _overlaps(lo: float, hi: float, levels: LevelGrid) -> np.ndarray:
    """Length of ``[lo, hi]`` inside each level bin."""
    e = levels.edges
    return np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)


@dataclass(frozen=True)
class SbmModel:
    """Branching rate ``sigma``: power law ``u**gamma_prime`` or piecewise constant table."""

    levels: LevelGrid
    gamma_prime: float | None = 0.0
    table: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.table is not None:
            t = np.array(self.table, dtype=float).ravel()
            if t.shape != (self.levels.nu,):
                raise DomainError(f"sigma table needs {self.levels.nu} values, got {t.size}")
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise DomainError("sigma table must be finite and nonnegative")
            t.setflags(write=False)
            object.__setattr__(self, "table", t)
            object.__setattr__(self, "gamma_prime", None)
        elif self.gamma_prime is None or not (self.gamma_prime >= 0):
            raise DomainError(f"gamma_prime must be >= 0, got {self.gamma_prime}")

    kind = "sbm"

    @property
    def power(self) -> bool:
        return self.table is None

    @property
    def u_max(self) -> float:
        return self.levels.u_max

    def sigma(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.power:
            return u**self.gamma_prime
        k = np.clip(np.floor(u / self.levels.du).astype(np.int64), 0, self.levels.nu - 1)
        return self.table[k]

    @property
    def sigma_bins(self) -> np.ndarray:
        """sigma at level-bin midpoints (the table itself when tabulated)."""
        return self.table.copy() if not self.power else self.sigma(self.levels.midpoints)

    def sigma0(self, v) -> np.ndarray:
        """Integrated rate; defined beyond ``u_max`` only for the power law."""
        v = np.asarray(v, dtype=float)
        if self.power:
            g = self.gamma_prime + 1.0
            return v**g / g
        return _table_sigma0(v, self.table, self.levels.du)

    def mass_kernel_args(self):
        """(kind code, exponent, cumulative table, table, bin width) for ``mass_chunk``."""
        if self.power:
            z = np.zeros(1)
            return 0, float(self.gamma_prime), np.zeros(2), z, 1.0
        cum = np.concatenate(([0.0], np.cumsum(self.table) * self.levels.du))
        return 1, 0.0, cum, np.asarray(self.table, dtype=float), self.levels.du


def _table_sigma0(v, table, du):
    cum = np.concatenate(([0.0], np.cumsum(table) * du))
    nb = table.shape[0]
    k = np.floor(v / du).astype(np.int64)
    inside = np.minimum(k, nb - 1)
    return np.where(k >= nb, cum[nb] + table[nb - 1] * (v - nb * du),
                    cum[inside] + table[inside] * (v - inside * du))


@dataclass(frozen=True)
class FvModel:
    """Resampling rate ``gamma`` on ``[0, 1]^2``: constant ``c`` or an ``n x n`` table."""

    levels: LevelGrid
    c: float | None = 1.0
    table: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.levels.u_max != 1.0:
            raise DomainError(f"Fleming-Viot levels live on [0, 1], got u_max={self.levels.u_max}")
        if self.table is not None:
            n = self.levels.nu
            t = np.array(self.table, dtype=float)
            if t.size != n * n:
                raise DomainError(f"gamma table needs {n}x{n} values, got {t.size}")
            t = t.reshape(n, n)
            if np.any(t < 0) or not np.all(np.isfinite(t)):
                raise DomainError("gamma table must be finite and nonnegative")
            t.setflags(write=False)
            object.__setattr__(self, "table", t)
            object.__setattr__(self, "c", None)
        elif self.c is None or not (self.c >= 0) or not math.isfinite(self.c):
            raise DomainError(f"gamma constant must be finite and >= 0, got {self.c}")

    kind = "fv"

    @property
    def constant(self) -> bool:
        return self.table is None

    @property
    def u_max(self) -> float:
        return 1.0

    @property
    def gamma_bins(self) -> np.ndarray:
        n = self.levels.nu
        return np.full((n, n), float(self.c)) if self.constant else self.table.copy()

    @property
    def sup_gamma(self) -> float:
        return float(self.c) if self.constant else float(self.table.max())

    def rect_integral(self, a0: float, a1: float, b0: float, b1: float) -> float:
        """Integral of gamma over ``[a0, a1] x [b0, b1]``; exact for piecewise-constant tables."""
        if a1 <= a0 or b1 <= b0:
            return 0.0
        if self.constant:
            return float(self.c) * (a1 - a0) * (b1 - b0)
        la = _overlaps(a0, a1, self.levels)
        lb = _overlaps(b0, b1, self.levels)
        return float(la @ self.table @ lb)


Model = SbmModel | FvModel


def variance_rate(model: Model, v: float) -> float:
    """``int_E G(u, v)^2 pi(du)``."""
    if isinstance(model, FvModel):
        if not (0.0 <= v <= 1.0):
            raise DomainError(f"Fleming-Viot level must lie in [0, 1], got {v}")
        if model.constant:
            return float(model.c) * v * (1.0 - v)
        return model.rect_integral(0.0, v, v, 1.0)
    if not (0.0 <= v <= model.u_max):
        raise DomainError(f"level must lie in [0, {model.u_max}], got {v}")
    return float(model.sigma0(v))


def discrete_variance_rate(model: Model, j) -> np.ndarray:
    """Per-unit-time variance of the binned aggregate ``S[j]``."""
    j = np.asarray(j, dtype=np.int64)
    du = model.levels.du
    if isinstance(model, FvModel):
        g = model.gamma_bins
        n = g.shape[0]
        # R[j] = sum_{a < j, b >= j} gamma
        suffix = np.zeros((n, n + 1))
        suffix[:, :n] = np.flip(np.cumsum(np.flip(g, axis=1), axis=1), axis=1)
        C = np.cumsum(suffix, axis=0)
        rate = np.zeros(n + 1)
        rate[1:] = C[np.arange(n), np.arange(1, n + 1)]
        return rate[j] * du * du
    cum = np.concatenate(([0.0], np.cumsum(model.sigma_bins)))
    return cum[j] * du


def _lipschitz_integral(model: Model, x1: float, x2: float) -> float:
    lo, hi = min(x1, x2), max(x1, x2)
    if isinstance(model, FvModel):
        # {a <= lo <= b} xor {a <= hi <= b}: [0,lo]x[lo,hi) and (lo,hi]x[hi,1]
        return model.rect_integral(0.0, lo, lo, hi) + model.rect_integral(lo, hi, hi, 1.0)
    return float(abs(model.sigma0(hi) - model.sigma0(lo)))


@dataclass
class ConditionCertificate:
    """What randomized probing found for the coefficient conditions.

    ``zero_residual`` is the numerically integrated ``int |G(u, 0)| pi(du)``;
    ``growth_constant`` the largest variance rate seen on ``[0, k]``;
    ``lipschitz_constant`` the largest ratio of the squared-difference
    integral to ``|x1 - x2|``. ``reference_bound`` is the analytic Lipschitz
    bound (sup sigma on ``[0, k]`` or ``sup gamma``) and ``max_violation`` the
    largest excess of the squared-difference integral over it.
    """

    family: str
    k: float
    probes: int
    probe_interval: tuple[float, float]
    seed: int
    zero_residual: float
    growth_constant: float
    lipschitz_constant: float
    reference_bound: float
    max_violation: float

    @property
    def zero_ok(self) -> bool:
        return self.zero_residual == 0.0

    @property
    def constants_finite(self) -> bool:
        return math.isfinite(self.growth_constant) and math.isfinite(self.lipschitz_constant)

    @property
    def ok(self) -> bool:
        return self.zero_ok and self.constants_finite and self.max_violation <= 1e-12


def _zero_residual(model: Model) -> float:
    mids = model.levels.midpoints
    du = model.levels.du
    if isinstance(model, FvModel):
        ind = (mids[:, None] <= 0.0) & (0.0 <= mids[None, :])
        return float(np.sum(ind * np.sqrt(model.gamma_bins)) * du * du)
    return float(np.sum((mids <= 0.0) * np.sqrt(model.sigma_bins)) * du)


def certify_conditions(model: Model, k: float, probes: int = 1000, seed: int = 0) -> ConditionCertificate:
    if probes < 100:
        raise DomainError(f"probes must be >= 100, got {probes}")
    top = min(float(k), model.u_max)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, top, size=probes)
    growth = max(variance_rate(model, float(x)) for x in np.append(xs, top))
    pairs = rng.uniform(0.0, top, size=(probes, 2))
    if isinstance(model, FvModel):
        bound = model.sup_gamma
    else:
        grid = np.linspace(0.0, top, 4097)
        bound = float(np.max(model.sigma(grid))) if model.power else float(
            np.max(model.table[: max(1, int(math.ceil(top / model.levels.du)))]))
    ratio = 0.0
    violation = 0.0
    for x1, x2 in pairs:
        d = _lipschitz_integral(model, x1, x2)
        gap = abs(x1 - x2)
        if gap > 0:
            ratio = max(ratio, d / gap)
        violation = max(violation, d - bound * gap)
    return ConditionCertificate(
        family=model.kind, k=float(k), probes=probes, probe_interval=(0.0, top), seed=seed,
        zero_residual=_zero_residual(model), growth_constant=float(growth),
        lipschitz_constant=float(ratio), reference_bound=bound, max_violation=float(violation),
    )


def positivity_check(model: SbmModel) -> float:
    """Fraction of level bins where sigma vanishes."""
    return float(np.mean(model.sigma_bins == 0.0))


def load_coefficients(path) -> np.ndarray:
    """Read a coefficient table; the first line must be the format header."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != COEFF_HEADER:
        raise DomainError(f"{path}: line 1: expected header {COEFF_HEADER!r}")
    values = []
    for lineno, line in enumerate(lines[1:], start=2):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        try:
            values.append(float(s))
        except ValueError:
            raise DomainError(f"{path}: line {lineno}: not a number: {s!r}") from None
    return np.array(values)


def save_coefficients(path, values) -> None:
    body = "\n".join(f"{v:.17g}" for v in np.asarray(values, dtype=float).ravel())
    Path(path).write_text(f"{COEFF_HEADER}\n{body}\n")
