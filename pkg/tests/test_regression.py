import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from avlm.regression import DesignPoint, SufficientStats, classical_f, snapshot, update

from conftest import make_stats
from oracles import projection_f


def test_single_point_identity():
    s = update(SufficientStats(1, 1), DesignPoint([1.0], [1.0], 2.0))
    assert s.n == 1
    np.testing.assert_array_equal(s.gram, [[1, 1], [1, 1]])
    np.testing.assert_array_equal(s.cross, [2, 2])
    assert s.yty == 4.0


def test_identical_points_are_rank_deficient():
    s = SufficientStats(1, 1)
    for _ in range(2):
        update(s, DesignPoint([1.0], [0.0], 1.0))
    np.testing.assert_array_equal(s.gram, [[2, 0], [0, 0]])
    assert s.n == 2
    assert not snapshot(s).full_rank


def test_stream_matches_batch_gram(rng):
    W = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    s = SufficientStats(2, 1)
    for w, v in zip(W, y):
        update(s, DesignPoint(w[:2], w[2:], v))
    np.testing.assert_allclose(s.gram, W.T @ W, rtol=1e-14)
    np.testing.assert_allclose(s.cross, W.T @ y, rtol=1e-14)
    assert s.yty == pytest.approx(y @ y, rel=1e-14)


def test_dimension_and_finiteness_checks():
    s = SufficientStats(1, 1)
    with pytest.raises(ValueError, match="p=2"):
        update(s, DesignPoint([1.0, 2.0], [1.0], 0.0))
    with pytest.raises(ValueError, match="non-finite"):
        DesignPoint([1.0], [np.nan], 0.0)
    with pytest.raises(ValueError):
        DesignPoint([1.0], [], 0.0)
    with pytest.raises(ValueError):
        SufficientStats(0, 0)


def test_underdetermined_is_not_full_rank(rng):
    W = rng.normal(size=(3, 3))
    assert not snapshot(make_stats(W, rng.normal(size=3), 2)).full_rank


def test_perfect_fit_has_zero_s2_and_no_t():
    x = np.ones(6)
    z = np.arange(6.0)
    y = 2.0 + 0.5 * z
    snap = snapshot(make_stats(np.column_stack([x, z]), y, 1))
    assert snap.full_rank
    assert snap.s2 == pytest.approx(0.0, abs=1e-12)
    if snap.s2 == 0.0:
        assert snap.t_vec is None
        assert math.isinf(classical_f(snap))


def test_intercept_only_matches_batch_ols(rng):
    n = 20
    z = rng.normal(size=n)
    y = 1.0 + 0.4 * z + rng.normal(size=n)
    X = np.ones((n, 1))
    W = np.column_stack([X, z])
    snap = snapshot(make_stats(W, y, 1))
    coef, *_ = np.linalg.lstsq(W, y, rcond=None)
    resid = y - W @ coef
    zc = z - z.mean()
    assert snap.delta_hat[0] == pytest.approx(coef[1], rel=1e-10)
    assert snap.beta_hat[0] == pytest.approx(coef[0], rel=1e-10)
    assert snap.s2 == pytest.approx(resid @ resid / (n - 2), rel=1e-10)
    assert snap.ztilde_gram[0, 0] == pytest.approx(zc @ zc, rel=1e-10)
    assert snap.nu == n - 2


def test_f_matches_projection_oracle(rng):
    n = 50
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    Z = rng.normal(size=(n, 2))
    y = X @ [1.0, -0.5] + Z @ [0.2, 0.1] + rng.normal(size=n)
    snap = snapshot(make_stats(np.column_stack([X, Z]), y, 2))
    assert classical_f(snap) == pytest.approx(projection_f(X, Z, y), rel=1e-10)
    assert classical_f(snap) == pytest.approx(snap.t_vec @ snap.t_vec / 2, rel=1e-12)


def test_f_zero_at_zero_effect():
    # z orthogonal to y after removing the mean
    z = np.array([1.0, -1.0, 1.0, -1.0, 0.0, 0.0])
    y = np.array([1.0, 1.0, 2.0, 2.0, 3.0, 3.0])
    snap = snapshot(make_stats(np.column_stack([np.ones(6), z]), y, 1))
    assert snap.delta_hat[0] == pytest.approx(0.0, abs=1e-14)
    assert classical_f(snap) == pytest.approx(0.0, abs=1e-20)


def test_d1_f_is_t_squared(rng):
    n = 30
    W = np.column_stack([np.ones(n), rng.normal(size=n)])
    y = W @ [0.3, 0.8] + rng.normal(size=n)
    snap = snapshot(make_stats(W, y, 1))
    t = snap.delta_hat[0] / snap.se[0]
    assert classical_f(snap) == pytest.approx(t * t, rel=1e-12)


def test_block_inverse_identity(rng):
    for _ in range(20):
        p, d = rng.integers(1, 4), rng.integers(1, 4)
        W = rng.normal(size=(40, p + d)) @ (np.eye(p + d) + 0.3 * rng.normal(size=(p + d, p + d)))
        snap = snapshot(make_stats(W, rng.normal(size=40), p))
        inv = np.linalg.inv(W.T @ W)
        np.testing.assert_allclose(np.linalg.inv(snap.ztilde_gram), inv[p:, p:], rtol=1e-8)


def test_ztilde_gram_matches_residualised_z(rng):
    n = 60
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    Z = rng.normal(size=(n, 2)) + X[:, 1:2]
    snap = snapshot(make_stats(np.column_stack([X, Z]), rng.normal(size=n), 2))
    Zt = Z - X @ np.linalg.lstsq(X, Z, rcond=None)[0]
    np.testing.assert_allclose(snap.ztilde_gram, Zt.T @ Zt, rtol=1e-10)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(-5, 5).filter(lambda v: abs(v) > 0.1),
       a=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       seed=st.integers(0, 2 ** 31))
def test_affine_nuisance_invariance(c, a, seed):
    rng = np.random.default_rng(seed)
    n = 25
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    Z = rng.normal(size=(n, 2))
    y = rng.normal(size=n)
    W = np.column_stack([X, Z])
    s1 = snapshot(make_stats(W, y, 2))
    s2 = snapshot(make_stats(W, c * y + X @ np.array(a), 2))
    np.testing.assert_allclose(s2.t_vec, math.copysign(1, c) * s1.t_vec, rtol=1e-8, atol=1e-10)
    assert s2.f_stat == pytest.approx(s1.f_stat, rel=1e-8)


def test_streaming_equals_batch_bitwise(rng):
    W = rng.normal(size=(200, 4))
    y = rng.normal(size=200)
    a = SufficientStats(2, 2)
    for w, v in zip(W, y):
        update(a, DesignPoint(w[:2], w[2:], v))
    b = make_stats(W, y, 2)
    for name in ("gram_hi", "gram_lo", "cross_hi", "cross_lo", "yty_pair"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    sa, sb = snapshot(a), snapshot(b)
    np.testing.assert_array_equal(sa.delta_hat, sb.delta_hat)
    assert sa.s2 == sb.s2


def test_compensated_sums_keep_long_streams_accurate():
    # 1e5 copies of a value whose naive running sum drifts
    n = 100_000
    v = 0.1
    W = np.full((n, 2), v)
    W[:, 0] = 1.0
    st_ = make_stats(W, np.full(n, v), 1)
    exact = math.fsum([v * v] * n)
    assert st_.gram[1, 1] == exact
    assert st_.yty == exact
    naive = 0.0
    for _ in range(n):
        naive += v * v
    assert naive != exact


def test_copy_is_independent(rng):
    s = make_stats(rng.normal(size=(5, 2)), rng.normal(size=5), 1)
    c = s.copy()
    update(c, DesignPoint([1.0], [1.0], 1.0))
    assert s.n == 5 and c.n == 6
    assert not np.array_equal(s.gram, c.gram)
