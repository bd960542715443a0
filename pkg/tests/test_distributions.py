import math

import numpy as np
import pytest
from scipy import stats

from avlm.distributions import (NoncentralF, chi2_cdf, chi2_quantile, f_quantile, ncf_cdf, ncf_quantile,
                                ncf_sf)


def test_central_reduction():
    for d1, d2 in [(1, 5), (3, 40), (2.5, 7.5)]:
        dist = NoncentralF(d1, d2, 0.0)
        for x in (0.01, 0.5, 1.0, 3.0, 50.0):
            assert ncf_cdf(dist, x) == pytest.approx(stats.f.cdf(x, d1, d2), rel=1e-12, abs=1e-15)


def test_matches_reference_implementation():
    for d1, d2, nc in [(1, 10, 2.0), (1, 2673, 107.0), (3, 50, 30.0), (2, 8, 400.0)]:
        dist = NoncentralF(d1, d2, nc)
        for x in np.linspace(0.1, 3 * (d1 + nc) / d1, 7):
            assert ncf_cdf(dist, x) == pytest.approx(stats.ncf.cdf(x, d1, d2, nc), abs=1e-10)


def test_monte_carlo_d1_equals_one():
    # F(1, nu, lam) is (N(sqrt(lam), 1)^2) / (chi2_nu / nu)
    rng = np.random.default_rng(11)
    m, nu, lam = 2_000_000, 12, 3.0
    f = (rng.normal(size=m) + math.sqrt(lam)) ** 2 / (rng.chisquare(nu, size=m) / nu)
    dist = NoncentralF(1, nu, lam)
    for x in (1.0, 4.0, 12.0):
        emp = float(np.mean(f <= x))
        p = ncf_cdf(dist, x)
        assert abs(emp - p) < 4 * math.sqrt(p * (1 - p) / m)


def test_cdf_plus_sf_is_one():
    dist = NoncentralF(1, 30, 25.0)
    for x in (0.5, 10.0, 25.0, 80.0):
        assert ncf_cdf(dist, x) + ncf_sf(dist, x) == pytest.approx(1.0, abs=1e-13)


def test_extreme_tails_stay_accurate():
    dist = NoncentralF(1, 100, 50.0)
    assert ncf_sf(dist, 400.0) == pytest.approx(stats.ncf.sf(400.0, 1, 100, 50.0), rel=1e-6)
    assert 0.0 < ncf_cdf(dist, 1e-4) < 1e-10


def test_round_trip():
    for d1, d2, nc in [(1, 10, 0.0), (1, 2673, 107.0), (4, 20, 12.0), (1, 5, 300.0)]:
        dist = NoncentralF(d1, d2, nc)
        for q in (1e-6, 0.01, 0.3, 0.5, 0.95, 0.999999):
            x = ncf_quantile(dist, q)
            assert dist.cdf(x) == pytest.approx(q, rel=1e-8)
            assert dist.quantile(q) == x


def test_quantile_edges_and_validation():
    dist = NoncentralF(1, 5, 1.0)
    assert ncf_quantile(dist, 0.0) == 0.0 and ncf_quantile(dist, 1.0) == math.inf
    with pytest.raises(ValueError):
        ncf_quantile(dist, 1.5)
    with pytest.raises(ValueError):
        NoncentralF(0, 5)
    with pytest.raises(ValueError):
        NoncentralF(1, 5, -1.0)
    assert ncf_cdf(dist, -1.0) == 0.0 and ncf_cdf(dist, math.inf) == 1.0
    assert math.isnan(ncf_cdf(dist, math.nan))


def test_f_quantile_table_value():
    assert f_quantile(1, 120, 0.95) == pytest.approx(3.9201, abs=1e-4)


def test_chi2():
    assert chi2_quantile(1, 0.95) == pytest.approx(3.841458820694124, rel=1e-12)
    assert chi2_quantile(2, 0.5) == pytest.approx(2 * math.log(2), rel=1e-12)
    assert chi2_cdf(2, 2 * math.log(2)) == pytest.approx(0.5, rel=1e-12)
    assert chi2_cdf(3, -1.0) == 0.0
    with pytest.raises(ValueError):
        chi2_quantile(0, 0.5)


def test_stochastic_ordering_and_monotonicity():
    xs = np.linspace(0.05, 20, 60)
    prev = None
    for nc in (0.0, 0.5, 2.0, 8.0, 30.0):
        c = np.array([ncf_cdf(NoncentralF(2, 15, nc), x) for x in xs])
        assert np.all(np.diff(c) > 0)
        if prev is not None:
            assert np.all(c <= prev)
        prev = c
