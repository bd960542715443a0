"""Streaming sufficient statistics for the partitioned linear model.

The model is ``y = X beta + Z delta + eps`` with ``p`` nuisance columns in
``X`` and ``d`` columns of interest in ``Z``.  Only the moments
``(n, W'W, W'y, y'y)`` with ``W = [X, Z]`` are retained, so memory is
constant in ``n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from avlm import kernel

RANK_TOL = 1e-10


@dataclass(frozen=True)
class DesignPoint:
    """A single observation ``(x, z, y)``.

    Parameters
    ----------
    x : array_like, shape (p,)
        Nuisance covariates. Include a column of ones here if an intercept
        is wanted; none is added automatically.
    z : array_like, shape (d,)
        Covariates whose coefficients are tested.
    y : float
        Outcome.
    """

    x: np.ndarray
    z: np.ndarray
    y: float

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if x.ndim != 1 or z.ndim != 1:
            raise ValueError("x and z must be one-dimensional")
        if z.size < 1:
            raise ValueError("z must have at least one entry")
        y = float(self.y)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z)) and math.isfinite(y)):
            raise ValueError("design point has non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def w(self) -> np.ndarray:
        return np.concatenate([self.x, self.z])


@dataclass
class SufficientStats:
    """Running moments ``(n, W'W, W'y, y'y)``.

    Each sum is held as a Neumaier pair ``(value, compensation)`` so long
    streams keep full double precision. The public ``gram``, ``cross`` and
    ``yty`` properties return the compensated totals.

    Parameters
    ----------
    p, d : int
        Number of nuisance and tested columns.
    """

    p: int
    d: int
    n: int = 0
    gram_hi: np.ndarray = field(default=None, repr=False)
    gram_lo: np.ndarray = field(default=None, repr=False)
    cross_hi: np.ndarray = field(default=None, repr=False)
    cross_lo: np.ndarray = field(default=None, repr=False)
    yty_pair: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.p < 0 or self.d < 1:
            raise ValueError(f"need p >= 0 and d >= 1, got p={self.p}, d={self.d}")
        k = self.p + self.d
        if self.gram_hi is None:
            self.gram_hi = np.zeros((k, k))
            self.gram_lo = np.zeros((k, k))
            self.cross_hi = np.zeros(k)
            self.cross_lo = np.zeros(k)
            self.yty_pair = np.zeros(2)

    @property
    def k(self) -> int:
        return self.p + self.d

    @property
    def gram(self) -> np.ndarray:
        return self.gram_hi + self.gram_lo

    @property
    def cross(self) -> np.ndarray:
        return self.cross_hi + self.cross_lo

    @property
    def yty(self) -> float:
        return float(self.yty_pair[0] + self.yty_pair[1])

    def copy(self) -> "SufficientStats":
        return SufficientStats(
            self.p, self.d, self.n, self.gram_hi.copy(), self.gram_lo.copy(),
            self.cross_hi.copy(), self.cross_lo.copy(), self.yty_pair.copy(),
        )

    def update_many(self, W, y) -> "SufficientStats":
        """Accumulate a block of rows ``W = [X, Z]`` and outcomes ``y`` in order."""
        W = np.ascontiguousarray(np.atleast_2d(np.asarray(W, dtype=float)))
        y = np.ascontiguousarray(np.asarray(y, dtype=float).reshape(-1))
        if W.shape[1] != self.k:
            raise ValueError(f"rows have {W.shape[1]} columns, expected p+d={self.k}")
        if W.shape[0] != y.shape[0]:
            raise ValueError("W and y have different numbers of rows")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(y))):
            raise ValueError("non-finite values in rows")
        kernel.accumulate(self.gram_hi, self.gram_lo, self.cross_hi, self.cross_lo,
                          self.yty_pair, W, y)
        self.n += W.shape[0]
        return self


def update(stats: SufficientStats, pt: DesignPoint) -> SufficientStats:
    """Add one observation to ``stats`` in place and return it."""
    if pt.x.size != stats.p or pt.z.size != stats.d:
        raise ValueError(
            f"design point has p={pt.x.size}, d={pt.z.size}; stats expect p={stats.p}, d={stats.d}"
        )
    return stats.update_many(pt.w[None, :], np.array([pt.y]))


def from_points(points: Iterable[DesignPoint], p: int, d: int) -> SufficientStats:
    stats = SufficientStats(p, d)
    for pt in points:
        update(stats, pt)
    return stats


def cholesky_checked(a: np.ndarray, rank_tol: float = RANK_TOL) -> Optional[np.ndarray]:
    """Lower Cholesky factor, or ``None`` when some pivot is below ``rank_tol * max(diag)``."""
    a = np.asarray(a, dtype=float)
    maxdiag = float(np.max(np.diag(a))) if a.size else 0.0
    if not maxdiag > 0.0:
        return None
    try:
        L = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.diag(L) ** 2 > rank_tol * maxdiag):
        return None
    return L


@dataclass(frozen=True)
class RegressionSnapshot:
    """Derived regression state at a fixed ``n``.

    Attributes
    ----------
    n, nu : int
        Sample size and residual degrees of freedom ``n - p - d``.
    delta_hat, beta_hat : ndarray
        OLS coefficients for ``Z`` and ``X``.
    s2 : float
        Residual variance ``RSS / nu``, clamped at zero.
    ztilde_gram : ndarray, shape (d, d)
        Gram matrix of ``Z`` after projecting out ``X``.
    t_vec : ndarray or None
        Maximal-invariant statistic ``Zt delta_hat / s`` with ``Zt`` the
        upper-triangular square root of ``ztilde_gram``. ``None`` when
        ``s2 == 0``.
    f_stat : float
        Classical F statistic, ``inf`` when ``s2 == 0`` and ``delta_hat != 0``.
    full_rank : bool
        False when ``n <= p + d`` or the Gram matrix is numerically singular.
        All other fields are NaN/None in that case.
    """

    n: int
    p: int
    d: int
    nu: int
    full_rank: bool
    delta_hat: np.ndarray
    beta_hat: np.ndarray
    s2: float
    ztilde_gram: np.ndarray
    t_vec: Optional[np.ndarray]
    f_stat: float
    s2_clamped: bool = False
    ztilde_chol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def rss(self) -> float:
        return self.nu * self.s2

    @property
    def se(self) -> np.ndarray:
        """Classical standard errors of ``delta_hat``."""
        if not self.full_rank:
            return np.full(self.d, np.nan)
        return np.sqrt(self.s2 * np.diag(np.linalg.inv(self.ztilde_gram)))


def _rank_deficient(stats: SufficientStats) -> RegressionSnapshot:
    nan_d = np.full(stats.d, np.nan)
    return RegressionSnapshot(
        n=stats.n, p=stats.p, d=stats.d, nu=stats.n - stats.k, full_rank=False,
        delta_hat=nan_d, beta_hat=np.full(stats.p, np.nan), s2=math.nan,
        ztilde_gram=np.full((stats.d, stats.d), np.nan), t_vec=None, f_stat=math.nan,
    )


def snapshot(stats: SufficientStats, rank_tol: float = RANK_TOL) -> RegressionSnapshot:
    """Solve OLS from the running moments.

    Uses one Cholesky factorisation ``W'W = L L'``. The trailing ``d x d``
    block ``L22`` of ``L`` gives ``Zt'Zt = L22 L22'`` directly, and the
    residual sum of squares is ``y'y - ||L^{-1} W'y||^2``.
    """
    p, d, k = stats.p, stats.d, stats.k
    if stats.n <= k:
        return _rank_deficient(stats)
    L = cholesky_checked(stats.gram, rank_tol)
    if L is None:
        return _rank_deficient(stats)
    u = np.linalg.solve(L, stats.cross)
    gam = np.linalg.solve(L.T, u)
    rss_raw = stats.yty - float(u @ u)
    clamped = rss_raw < 0.0
    rss = max(rss_raw, 0.0)
    nu = stats.n - k
    s2 = rss / nu
    L22 = L[p:, p:]
    G = L22 @ L22.T
    delta_hat = gam[p:]
    zt_delta = L22.T @ delta_hat
    q = float(zt_delta @ zt_delta)
    if s2 > 0.0:
        t_vec = zt_delta / math.sqrt(s2)
        f = q / (d * s2)
    else:
        t_vec = None
        f = math.inf if q > 0.0 else 0.0
    return RegressionSnapshot(
        n=stats.n, p=p, d=d, nu=nu, full_rank=True, delta_hat=delta_hat,
        beta_hat=gam[:p], s2=s2, ztilde_gram=G, t_vec=t_vec, f_stat=f,
        s2_clamped=clamped, ztilde_chol=L22,
    )


def classical_f(snap: RegressionSnapshot) -> float:
    """Classical F statistic ``delta_hat' Zt'Zt delta_hat / (d s^2)``.

    Returns ``inf`` (infinite evidence) when ``s2 == 0`` and the effect is
    nonzero.
    """
    if not snap.full_rank:
        raise ValueError("classical F needs a full-rank snapshot")
    return snap.f_stat
