import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from dfspde.core import LevelGrid
from dfspde.errors import DomainError
from dfspde.models import FvModel, SbmModel, discrete_variance_rate
from dfspde.noise import (NoisePanel1D, NoisePanel2D, SeedSpec, aggregate_fv, aggregate_fv_block,
                          aggregate_sbm, aggregate_sbm_block, panel_scale, sample_panel, sample_panels)
from oracles import fv_direct, sbm_direct


def test_seed_determinism():
    lv = LevelGrid(4.0, 16)
    a = sample_panel(SeedSpec(7, 3).generator(), lv, 1e-3)
    b = sample_panel(SeedSpec(7, 3).generator(), lv, 1e-3)
    c = sample_panel(SeedSpec(7, 4).generator(), lv, 1e-3)
    assert isinstance(a, NoisePanel1D)
    assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)
    assert isinstance(sample_panel(SeedSpec(7).generator(), lv, 1e-3, two_d=True), NoisePanel2D)


def test_chunked_sampling_continues_the_stream():
    lv = LevelGrid(1.0, 8)
    whole = sample_panels(SeedSpec(1).generator(), lv, 1e-2, 10, two_d=True)
    rng = SeedSpec(1).generator()
    parts = np.concatenate([sample_panels(rng, lv, 1e-2, 3, True), sample_panels(rng, lv, 1e-2, 7, True)])
    assert_array_equal(whole, parts)


@pytest.mark.parametrize("bad", [-1, 2**64])
def test_bad_seed(bad):
    with pytest.raises(DomainError):
        SeedSpec(bad)


@pytest.mark.parametrize("dt", [0.0, -1e-3])
def test_bad_dt(dt):
    with pytest.raises(DomainError):
        sample_panel(np.random.default_rng(0), LevelGrid(1.0, 4), dt)


def test_panel_moments():
    lv = LevelGrid(4.0, 16)
    dt = 1e-3
    x = sample_panels(SeedSpec(11).generator(), lv, dt, 100_000)[:, 5]
    var = dt * lv.du
    assert abs(x.mean()) <= 4 * math.sqrt(var / x.size)
    assert abs(x.var() / var - 1) <= 0.05
    assert panel_scale(lv, dt, True) == pytest.approx(math.sqrt(dt) * lv.du)


def test_sbm_aggregate_examples():
    sig = np.ones(8)
    assert_array_equal(aggregate_sbm(NoisePanel1D(np.zeros(8), 1.0), sig).S, np.zeros(9))
    inc = np.zeros(8)
    inc[2] = 0.3  # third bin
    S = aggregate_sbm(NoisePanel1D(inc, 1.0), sig).S
    assert_array_equal(S, np.where(np.arange(9) >= 3, 0.3, 0.0))


def test_fv_aggregate_examples():
    g = np.ones((6, 6))
    assert_array_equal(aggregate_fv(NoisePanel2D(np.zeros((6, 6)), 1.0), g).S, np.zeros(7))
    inc = np.zeros((6, 6))
    inc[1, 4] = 0.7
    S = aggregate_fv(NoisePanel2D(inc, 1.0), g).S
    j = np.arange(7)
    # a-bin entirely below the level, b-bin entirely above it
    assert_array_equal(S, np.where((1 < j) & (j <= 4), 0.7, 0.0))


def test_negative_coefficients_rejected():
    with pytest.raises(DomainError):
        aggregate_sbm_block(np.zeros((1, 4)), np.array([1.0, -1.0, 1.0, 1.0]))
    with pytest.raises(DomainError):
        aggregate_fv_block(np.zeros((1, 3, 3)), -np.ones((3, 3)))


def test_random_cases_match_direct_sums(rng):
    for _ in range(100):
        nu = int(rng.integers(2, 40))
        inc, sig = rng.standard_normal(nu), rng.uniform(0, 2, nu)
        assert np.max(np.abs(aggregate_sbm_block(inc[None], sig)[0] - sbm_direct(inc, sig))) <= 1e-12
        n = int(rng.integers(2, 16))
        inc2, gam = rng.standard_normal((n, n)), rng.uniform(0, 2, (n, n))
        assert np.max(np.abs(aggregate_fv_block(inc2[None], gam)[0] - fv_direct(inc2, gam))) <= 1e-12


@settings(max_examples=50)
@given(st.integers(2, 30), st.integers(0, 2**32 - 1))
def test_sbm_differences_are_single_bins(nu, seed):
    r = np.random.default_rng(seed)
    inc, sig = r.standard_normal(nu), r.uniform(0, 2, nu)
    S = aggregate_sbm_block(inc[None], sig)[0]
    assert S[0] == 0.0
    assert_allclose(np.diff(S), np.sqrt(sig) * inc, rtol=0, atol=1e-13)


def test_fv_end_levels_vanish(rng):
    S = aggregate_fv_block(rng.standard_normal((5, 9, 9)), rng.uniform(0, 1, (9, 9)))
    assert np.all(S[:, 0] == 0.0) and np.all(S[:, -1] == 0.0)


def test_aggregate_variance_matches_rate():
    dt = 1e-2
    lv = LevelGrid(2.0, 8)
    sbm = SbmModel(lv, gamma_prime=1.0)
    inc = sample_panels(SeedSpec(3).generator(), lv, dt, 100_000)
    S = aggregate_sbm_block(inc, sbm.sigma_bins)
    j = np.arange(1, 9)
    assert_allclose(S[:, j].var(axis=0), dt * discrete_variance_rate(sbm, j), rtol=0.05)
    flv = LevelGrid(1.0, 6)
    fvm = FvModel(flv, c=2.0)
    inc2 = sample_panels(SeedSpec(4).generator(), flv, dt, 100_000, two_d=True)
    S2 = aggregate_fv_block(inc2, fvm.gamma_bins)
    j = np.arange(1, 6)
    assert_allclose(S2[:, j].var(axis=0), dt * discrete_variance_rate(fvm, j), rtol=0.05)
