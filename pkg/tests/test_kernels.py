"""The compiled and numpy kernels must agree; the env flag must select the path."""
import math
import os
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from dfspde import _accel
from dfspde import _kernels_numpy as npk
from dfspde.core import LevelGrid, MonotoneField, SpatialGrid
from dfspde.integrator import aggregate_block
from dfspde.models import FvModel, SbmModel
from dfspde.noise import SeedSpec, sample_panels

nb = pytest.importorskip("dfspde._kernels_numba") if _accel.HAVE_NUMBA else None
pytestmark = pytest.mark.skipif(nb is None, reason="numba not installed")


def test_pava_agrees(rng):
    for n in (1, 2, 7, 100, 1000):
        y = rng.standard_normal(n).cumsum() * rng.choice([-1, 1])
        assert_allclose(nb.pava(y), npk.pava(y), rtol=1e-12, atol=1e-12)
        # exact idempotency on the compiled path
        p = nb.pava(y)
        assert_array_equal(nb.pava(p), p)


def _evolve_both(model, Y0, dt, nsteps, implicit, seed=0):
    S = aggregate_block(model, sample_panels(SeedSpec(seed).generator(), model.levels, dt, nsteps,
                                             isinstance(model, FvModel)))
    out = []
    for k in (nb, npk):
        y = Y0.values.copy()
        n1 = y.size
        bufs = dict(mass=np.empty(nsteps), proj=np.empty(nsteps), clamp=np.empty(nsteps, np.int64),
                    corr=np.empty((nsteps, n1)), snaps=np.zeros((nsteps + 1, n1)))
        cap = 1.0 if isinstance(model, FvModel) else model.u_max
        status, done = k.evolve(y, S, model.levels.du, dt, Y0.grid.dx, implicit, cap,
                                isinstance(model, FvModel), math.inf, 1, 0, bufs["mass"], bufs["proj"],
                                bufs["clamp"], bufs["corr"], bufs["snaps"])
        out.append((status, done, y, bufs))
    return out


@pytest.mark.parametrize("implicit", [False, True])
def test_evolve_agrees_sbm(implicit):
    g = SpatialGrid(-6.0, 6.0, 96)
    model = SbmModel(LevelGrid(8.0, 64), gamma_prime=0.5)
    (s1, d1, y1, b1), (s2, d2, y2, b2) = _evolve_both(model, MonotoneField.gaussian_cdf(g, 0, 0.5), 1e-3,
                                                      200, implicit)
    assert (s1, d1) == (s2, d2)
    assert_allclose(y1, y2, rtol=0, atol=1e-12)
    assert_allclose(b1["snaps"], b2["snaps"], rtol=0, atol=1e-12)
    assert_allclose(b1["corr"], b2["corr"], rtol=0, atol=1e-12)
    assert_array_equal(b1["clamp"], b2["clamp"])


def test_evolve_agrees_fv():
    g = SpatialGrid(-6.0, 6.0, 64)
    model = FvModel(LevelGrid(1.0, 16), c=1.0)
    v = MonotoneField.gaussian_cdf(g, 0, 0.5).values.copy()
    v[-1] = 1.0
    (s1, d1, y1, b1), (s2, d2, y2, b2) = _evolve_both(model, MonotoneField(g, v, 1.0), 1e-3, 200, False)
    assert (s1, d1) == (s2, d2)
    assert_allclose(y1, y2, rtol=0, atol=1e-12)
    assert np.all(b1["snaps"][1:, -1] == 1.0) and np.all(b2["snaps"][1:, -1] == 1.0)


@pytest.mark.parametrize("model", [SbmModel(LevelGrid(1.0, 2), 0.5),
                                   SbmModel(LevelGrid(4.0, 32), table=np.linspace(0.2, 2.0, 32))])
def test_mass_chunk_agrees(model, rng):
    R, m = 50, 400
    xi = rng.standard_normal((R, m))
    res = []
    for k in (nb, npk):
        z = np.full(R, 0.3)
        alive = np.ones(R, bool)
        absorbed = np.full(R, -1, np.int64)
        qr, qp, inj = np.zeros(R), np.zeros(R), np.zeros(R)
        path = np.zeros((R, m))
        k.mass_chunk(z, alive, absorbed, qr, qp, inj, xi, math.sqrt(1e-2), 1e-2, *model.mass_kernel_args(),
                     3e-5, 0, path)
        res.append((z, alive, absorbed, qr, qp, inj, path))
    for a, b in zip(*res):
        assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_env_flag_selects_numpy():
    code = ("import numpy as np, dfspde; from dfspde import *; from dfspde.core import *;"
            "g=SpatialGrid(-6,6,64); m=SbmModel(LevelGrid(8.0,64),0.5);"
            "r=run(MonotoneField.gaussian_cdf(g,0,0.5),m,SchemeConfig(1e-3),SeedSpec(1),0.05);"
            "print(dfspde.backend()); print(repr(float(r.mass[-1])))")
    env = dict(os.environ, DFSPDE_NO_JIT="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    name, value = out.stdout.split()
    assert name == "numpy"
    env["DFSPDE_NO_JIT"] = "0"
    ref = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    rname, rvalue = ref.stdout.split()
    assert rname == "numba"
    assert abs(float(value) - float(rvalue)) <= 1e-12
