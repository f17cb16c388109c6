"""Independent reference implementations used only by the tests.

Each oracle is written for clarity, not speed, and shares no code with the
package beyond numpy and scipy.
"""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import solve_banded


def pava_minmax(y):
    """Isotonic regression from the min-max formula ``max_{j<=i} min_{k>=i} mean(y[j:k+1])``."""
    y = np.asarray(y, dtype=float)
    n = y.size
    c = np.concatenate(([0.0], np.cumsum(y)))
    out = np.empty(n)
    for i in range(n):
        best = -math.inf
        for j in range(i + 1):
            worst = min((c[k + 1] - c[j]) / (k + 1 - j) for k in range(i, n))
            best = max(best, worst)
        out[i] = best
    return out


def inverse_scan(values, u):
    """Index of the first entry ``>= u`` by linear scan; ``len(values)`` if none."""
    for i, v in enumerate(values):
        if v >= u:
            return i
    return len(values)


def sbm_direct(inc, sigma):
    nu = len(inc)
    return np.array([sum(math.sqrt(sigma[k]) * inc[k] for k in range(j)) for j in range(nu + 1)])


def fv_direct(inc, gamma):
    n = inc.shape[0]
    return np.array([sum(math.sqrt(gamma[a, b]) * inc[a, b] for a in range(j) for b in range(j, n))
                     for j in range(n + 1)])


def feller_extinction(z0, T):
    """``P(Z_T = 0)`` for ``dZ = sqrt(Z) dB``."""
    return math.exp(-2.0 * z0 / T)


def extinction_probability(gamma_prime, z0, T, zmax=60.0, n=6000, nt=4000, level=0.0):
    """``P(tau_level <= T)`` for ``dZ = sqrt(Z**(g+1) / (g+1)) dB`` from the backward equation.

    Solves ``u_t = (1/2) sigma_0(z) u_zz`` with ``u(t, level) = 1``,
    ``u(0, z) = 0`` and ``u(t, zmax) = 0`` by backward Euler on a uniform grid.
    """
    z = np.linspace(level, zmax, n + 1)
    dz = z[1] - z[0]
    dt = T / nt
    g = gamma_prime + 1.0
    a = 0.5 * z[1:-1] ** g / g * dt / dz**2
    m = a.size
    ab = np.zeros((3, m))
    ab[0, 1:] = -a[:-1]
    ab[1] = 1.0 + 2.0 * a
    ab[2, :-1] = -a[1:]
    u = np.zeros(m)
    rhs_left = np.zeros(m)
    rhs_left[0] = a[0]
    for _ in range(nt):
        u = solve_banded((1, 1), ab, u + rhs_left)
    return float(np.interp(z0, z[1:-1], u))
