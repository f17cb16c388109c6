"""Pure-numpy implementations of the hot loops (fallback path).

Signatures mirror ``_kernels_numba`` exactly. Loops over time steps stay in
Python; work inside a step is vectorized. Isotonic projection uses scipy's
compiled PAVA so this path is an independent second route.
"""
from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded
from scipy.optimize import isotonic_regression

OK = 0
BREACH = 1
NONFINITE = 2


def pava(y):
    return np.asarray(isotonic_regression(np.asarray(y, dtype=float)).x, dtype=float)


def _semi_implicit_matrix(n1, lam):
    nx = n1 - 1
    ab = np.zeros((3, nx))
    ab[0, 1:] = -lam
    ab[1, :] = 1.0 + 2.0 * lam
    ab[1, -1] = 1.0 + lam
    ab[2, :-1] = -lam
    return ab


def evolve(y, S, du, dt, dx, implicit, cap, pin_right, breach_level, stride,
           step_base, mass_out, proj_out, clamp_out, corr_out, snaps_out):
    n1 = y.shape[0]
    nx = n1 - 1
    nu = S.shape[1] - 1
    lam = dt / (2.0 * dx * dx)
    record_corr = corr_out.shape[0] > 0
    ab = _semi_implicit_matrix(n1, lam) if implicit else None
    for n in range(S.shape[0]):
        bins = np.clip(np.floor(y / du), 0, nu).astype(np.int64)
        noise = S[n, bins]
        if implicit:
            ystar = np.empty(n1)
            rhs = y + noise
            ystar[0] = rhs[0]
            ystar[1:] = solve_banded((1, 1), ab, rhs[1:])
        else:
            lap = np.empty(n1)
            lap[0] = y[1] - 2.0 * y[0]
            lap[1:nx] = y[:nx - 1] - 2.0 * y[1:nx] + y[2:]
            lap[nx] = y[nx - 1] - y[nx]
            ystar = y + lam * lap + noise
        if not np.all(np.isfinite(ystar)):
            return NONFINITE, n
        work = ystar.copy()
        work[0] = 0.0
        if pin_right:
            work[nx] = 1.0
        out = pava(work)
        clamped = int(np.count_nonzero((out < 0.0) | (out > cap)))
        np.clip(out, 0.0, cap, out=out)
        out[0] = 0.0
        if pin_right:
            out[nx] = 1.0
        y[:] = out
        e = y - ystar
        if record_corr:
            corr_out[n] = e
        proj_out[n] = np.sqrt(np.dot(e, e))
        clamp_out[n] = clamped
        mass_out[n] = y[nx]
        g = step_base + n + 1
        if g % stride == 0:
            snaps_out[g // stride] = y
        if y[nx] >= breach_level:
            return BREACH, n + 1
    return OK, S.shape[0]


def _sigma0(z, kind, gp, cum, sig, tdu):
    if kind == 0:
        if gp == 0.0:
            return z
        return z ** (gp + 1.0) / (gp + 1.0)
    nb = sig.shape[0]
    k = np.floor(z / tdu).astype(np.int64)
    inside = np.minimum(k, nb - 1)
    base = np.where(k >= nb, cum[nb], cum[inside])
    slope = np.where(k >= nb, sig[nb - 1], sig[inside])
    left = np.where(k >= nb, nb * tdu, k * tdu)
    return base + slope * (z - left)


def mass_chunk(z, alive, absorbed_step, qv_real, qv_pred, added, xi, sqrt_dt, dt,
               kind, gp, cum, sig, tdu, floor, step_base, path_out):
    record = path_out.shape[0] > 0
    idx = np.flatnonzero(alive)
    zr = z[idx].copy()
    for n in range(xi.shape[1]):
        if idx.size == 0:
            break
        s0 = _sigma0(zr, kind, gp, cum, sig, tdu)
        qv_pred[idx] += s0 * dt
        znew = zr + (np.sqrt(s0) * sqrt_dt) * xi[idx, n]
        hit = znew <= floor
        added[idx[hit]] -= znew[hit]
        znew[hit] = 0.0
        d = znew - zr
        qv_real[idx] += d * d
        zr = znew
        if record:
            path_out[idx, n] = zr
        dead = zr == 0.0
        if np.any(dead):
            gone = idx[dead]
            alive[gone] = False
            absorbed_step[gone] = step_base + n + 1
            z[gone] = 0.0
            if record:
                path_out[gone, n + 1:] = 0.0
            idx = idx[~dead]
            zr = zr[~dead]
    z[idx] = zr
