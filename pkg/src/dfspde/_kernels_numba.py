"""numba implementations of the hot loops.

Every function here has a twin with the identical signature in
``_kernels_numpy``; ``kernels`` picks one at import time.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

OK = 0
BREACH = 1
NONFINITE = 2


@njit(cache=True, nogil=True)
def _pava_into(y, out, sums, cnts):
    n = y.shape[0]
    top = -1
    for i in range(n):
        top += 1
        sums[top] = y[i]
        cnts[top] = 1
        # merge while the previous block mean exceeds the new one
        while top > 0 and sums[top - 1] / cnts[top - 1] > sums[top] / cnts[top]:
            sums[top - 1] += sums[top]
            cnts[top - 1] += cnts[top]
            top -= 1
    k = 0
    for b in range(top + 1):
        m = sums[b] / cnts[b]
        for _ in range(cnts[b]):
            out[k] = m
            k += 1


@njit(cache=True, nogil=True)
def pava(y):
    n = y.shape[0]
    out = np.empty(n)
    _pava_into(y, out, np.empty(n), np.empty(n, dtype=np.int64))
    return out


@njit(cache=True, nogil=True)
def _semi_implicit(rhs, lam, out, cp, dp):
    # (I - lam*L) out = rhs on nodes 1..nx, node 0 Dirichlet 0, node nx Neumann
    nx = rhs.shape[0] - 1
    out[0] = rhs[0]
    b = 1.0 + 2.0 * lam
    if nx == 1:
        out[1] = rhs[1] / (1.0 + lam)
        return
    cp[1] = -lam / b
    dp[1] = rhs[1] / b
    for i in range(2, nx):
        m = b + lam * cp[i - 1]
        cp[i] = -lam / m
        dp[i] = (rhs[i] + lam * dp[i - 1]) / m
    m = (1.0 + lam) + lam * cp[nx - 1]
    out[nx] = (rhs[nx] + lam * dp[nx - 1]) / m
    for i in range(nx - 1, 0, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]


@njit(cache=True, nogil=True)
def evolve(y, S, du, dt, dx, implicit, cap, pin_right, breach_level, stride,
           step_base, mass_out, proj_out, clamp_out, corr_out, snaps_out):
    n1 = y.shape[0]
    nx = n1 - 1
    nu = S.shape[1] - 1
    lam = dt / (2.0 * dx * dx)
    record_corr = corr_out.shape[0] > 0
    ystar = np.empty(n1)
    work = np.empty(n1)
    sums = np.empty(n1)
    cnts = np.empty(n1, dtype=np.int64)
    cp = np.empty(n1)
    dp = np.empty(n1)
    for n in range(S.shape[0]):
        # noise and drift both read the pre-step field
        for i in range(n1):
            b = int(math.floor(y[i] / du))
            if b < 0:
                b = 0
            elif b > nu:
                b = nu
            work[i] = S[n, b]
        if implicit:
            for i in range(n1):
                work[i] += y[i]
            _semi_implicit(work, lam, ystar, cp, dp)
        else:
            ystar[0] = y[0] + lam * (y[1] - 2.0 * y[0]) + work[0]
            for i in range(1, nx):
                ystar[i] = y[i] + lam * (y[i - 1] - 2.0 * y[i] + y[i + 1]) + work[i]
            ystar[nx] = y[nx] + lam * (y[nx - 1] - y[nx]) + work[nx]
        for i in range(n1):
            if not math.isfinite(ystar[i]):
                return NONFINITE, n
        for i in range(n1):
            work[i] = ystar[i]
        work[0] = 0.0
        if pin_right:
            work[nx] = 1.0
        _pava_into(work, y, sums, cnts)
        clamped = 0
        for i in range(n1):
            if y[i] < 0.0:
                y[i] = 0.0
                clamped += 1
            elif y[i] > cap:
                y[i] = cap
                clamped += 1
        y[0] = 0.0
        if pin_right:
            y[nx] = 1.0
        d = 0.0
        for i in range(n1):
            e = y[i] - ystar[i]
            d += e * e
            if record_corr:
                corr_out[n, i] = e
        proj_out[n] = math.sqrt(d)
        clamp_out[n] = clamped
        mass_out[n] = y[nx]
        g = step_base + n + 1
        if g % stride == 0:
            row = g // stride
            for i in range(n1):
                snaps_out[row, i] = y[i]
        if y[nx] >= breach_level:
            return BREACH, n + 1
    return OK, S.shape[0]


@njit(cache=True, nogil=True)
def _sigma0(z, kind, gp, cum, sig, tdu):
    if kind == 0:
        if gp == 0.0:
            return z
        return z ** (gp + 1.0) / (gp + 1.0)
    nb = sig.shape[0]
    k = int(math.floor(z / tdu))
    if k >= nb:
        return cum[nb] + sig[nb - 1] * (z - nb * tdu)
    return cum[k] + sig[k] * (z - k * tdu)


@njit(cache=True, nogil=True)
def mass_chunk(z, alive, absorbed_step, qv_real, qv_pred, added, xi, sqrt_dt, dt,
               kind, gp, cum, sig, tdu, floor, step_base, path_out):
    # step-major so independent replicas overlap their pow/sqrt latency
    record = path_out.shape[0] > 0
    R = z.shape[0]
    died = np.zeros(R, np.bool_)
    for n in range(xi.shape[1]):
        for r in range(R):
            if not alive[r]:
                if died[r] and record:
                    path_out[r, n] = 0.0
                continue
            zr = z[r]
            s0 = _sigma0(zr, kind, gp, cum, sig, tdu)
            qv_pred[r] += s0 * dt
            znew = zr + (math.sqrt(s0) * sqrt_dt) * xi[r, n]
            if znew <= floor:
                added[r] -= znew
                znew = 0.0
            d = znew - zr
            qv_real[r] += d * d
            z[r] = znew
            if record:
                path_out[r, n] = znew
            if znew == 0.0:
                alive[r] = False
                died[r] = True
                absorbed_step[r] = step_base + n + 1
