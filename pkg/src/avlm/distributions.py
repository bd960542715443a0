"""Central and noncentral F and chi-squared distribution functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special, stats

TAIL_MASS = 1e-14


@dataclass(frozen=True)
class NoncentralF:
    """Noncentral F distribution ``F(d1, d2, lambda_nc)``.

    The noncentrality follows the chi-squared convention: the numerator is
    ``chi2(d1, lambda_nc) / d1`` with mean ``(d1 + lambda_nc) / d1``.
    """

    d1: float
    d2: float
    lambda_nc: float = 0.0

    def __post_init__(self):
        if not (self.d1 > 0 and self.d2 > 0):
            raise ValueError(f"degrees of freedom must be positive, got ({self.d1}, {self.d2})")
        if not self.lambda_nc >= 0 or not math.isfinite(self.lambda_nc):
            raise ValueError(f"noncentrality must be finite and >= 0, got {self.lambda_nc}")

    def cdf(self, x: float) -> float:
        return ncf_cdf(self, x)

    def quantile(self, q: float) -> float:
        return ncf_quantile(self, q)


def _poisson_range(mu: float) -> np.ndarray:
    # start at zero unless that would be wasteful; the low-index terms carry the extreme lower tail
    lo = 0 if mu < 1e4 else int(stats.poisson.ppf(TAIL_MASS, mu))
    hi = int(stats.poisson.isf(TAIL_MASS, mu)) + 1
    return np.arange(max(lo, 0), hi + 1)


def ncf_cdf(dist: NoncentralF, x: float) -> float:
    """CDF as a Poisson mixture of regularized incomplete beta functions.

    The series runs from index zero (or the ``1e-14`` lower Poisson quantile
    for very large noncentrality) to the ``1e-14`` upper quantile, so the
    neglected mixture weight is below ``2e-14``.
    """
    if math.isnan(x):
        return math.nan
    if x <= 0.0:
        return 0.0
    if math.isinf(x):
        return 1.0
    a, b = 0.5 * dist.d1, 0.5 * dist.d2
    # y and 1 - y computed separately to keep accuracy in both tails
    num, den = dist.d1 * x, dist.d1 * x + dist.d2
    y, yc = num / den, dist.d2 / den
    mu = 0.5 * dist.lambda_nc
    if mu == 0.0:
        return float(special.betainc(a, b, y)) if y <= 0.5 else float(special.betaincc(b, a, yc))
    j = _poisson_range(mu)
    logw = -mu + j * math.log(mu) - special.gammaln(j + 1.0)
    w = np.exp(logw)
    terms = special.betainc(a + j, b, y) if y <= 0.5 else special.betaincc(b, a + j, yc)
    return float(min(max(math.fsum(w * terms), 0.0), 1.0))


def ncf_sf(dist: NoncentralF, x: float) -> float:
    """Survival function ``1 - cdf``; accurate in the upper tail."""
    if math.isnan(x):
        return math.nan
    if x <= 0.0:
        return 1.0
    if math.isinf(x):
        return 0.0
    a, b = 0.5 * dist.d1, 0.5 * dist.d2
    den = dist.d1 * x + dist.d2
    yc = dist.d2 / den
    mu = 0.5 * dist.lambda_nc
    if mu == 0.0:
        return float(special.betainc(b, a, yc))
    j = _poisson_range(mu)
    w = np.exp(-mu + j * math.log(mu) - special.gammaln(j + 1.0))
    return float(min(max(math.fsum(w * special.betainc(b, a + j, yc)), 0.0), 1.0))


def ncf_quantile(dist: NoncentralF, q: float) -> float:
    """Inverse CDF by doubling bracket and Brent's method (relative tolerance 1e-12)."""
    if not 0.0 < q < 1.0:
        if q == 0.0:
            return 0.0
        if q == 1.0:
            return math.inf
        raise ValueError(f"q must lie in [0, 1], got {q}")
    hi = max(1.0, (dist.d1 + dist.lambda_nc) / dist.d1)
    while ncf_cdf(dist, hi) < q:
        hi *= 2.0
        if hi > 1e300:
            raise ArithmeticError("quantile bracket overflow")
    lo = 0.0
    return optimize.brentq(lambda v: ncf_cdf(dist, v) - q, lo, hi, xtol=1e-300, rtol=1e-12, maxiter=500)


def f_quantile(d1: float, d2: float, q: float) -> float:
    """Central F quantile."""
    return float(special.fdtri(d1, d2, q))


def chi2_quantile(d: float, q: float) -> float:
    """Chi-squared quantile with ``d`` degrees of freedom."""
    if not d > 0:
        raise ValueError(f"degrees of freedom must be positive, got {d}")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"q must lie in [0, 1], got {q}")
    return 2.0 * float(special.gammaincinv(0.5 * d, q))


def chi2_cdf(d: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    return float(special.gammainc(0.5 * d, 0.5 * x))
