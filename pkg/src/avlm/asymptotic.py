"""Asymptotic Bayes-factor approximations and the ATE confidence sequence.

These replace the exact statistic by forms that depend only on ``delta_hat``,
``s^2`` and an estimate of the per-observation covariance of the projected
treatment. They are anytime-valid only in the large-``n`` sense, but they
extend to randomized experiments with misspecified outcome models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from avlm.distributions import chi2_quantile
from avlm.regression import RegressionSnapshot, cholesky_checked
from avlm.sequential import ConfidenceRegion, MixtureSpec, _check_alpha, _delta0

SIGMA_ESTIMATORS = ("model_s2", "hc0")


@dataclass(frozen=True)
class AteConfig:
    """Settings for the regression-adjusted ATE confidence sequence.

    Parameters
    ----------
    rho : float
        Treatment probability in (0, 1).
    lam : float
        Prior sample-size equivalent; see :func:`lambda_recommend`.
    sigma_estimator : {"model_s2", "hc0"} or None
        ``None`` picks ``"model_s2"`` when ``rho == 0.5`` or interactions are
        included (it is then consistent or conservative) and ``"hc0"``
        otherwise.
    mu_m : array_like or None
        Known covariate means used to centre treatment-covariate interactions.
    include_interactions : bool
        Add ``z * (x - mu_m)`` columns as nuisance regressors.
    """

    rho: float
    lam: float
    sigma_estimator: Optional[str] = None
    mu_m: Optional[np.ndarray] = None
    include_interactions: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if not self.lam > 0 or not math.isfinite(self.lam):
            raise ValueError(f"lambda must be positive and finite, got {self.lam}")
        if self.sigma_estimator is not None and self.sigma_estimator not in SIGMA_ESTIMATORS:
            raise ValueError(f"sigma_estimator must be one of {SIGMA_ESTIMATORS}")
        if self.include_interactions and self.mu_m is None:
            raise ValueError("interactions need known covariate means mu_m")
        if self.mu_m is not None:
            object.__setattr__(self, "mu_m", np.atleast_1d(np.asarray(self.mu_m, dtype=float)))

    @property
    def estimator(self) -> str:
        if self.sigma_estimator is not None:
            return self.sigma_estimator
        return "model_s2" if (self.rho == 0.5 or self.include_interactions) else "hc0"

    @property
    def omega(self) -> float:
        return self.rho * (1.0 - self.rho)

    def design_row(self, covariates, treated: float) -> tuple[np.ndarray, np.ndarray]:
        """Nuisance and treatment regressors for one unit.

        Returns ``x = [1, covariates, z * (covariates - mu_m)]`` (the last
        block only with interactions) and ``z = [treated - rho]``.
        """
        c = np.atleast_1d(np.asarray(covariates, dtype=float))
        z = float(treated) - self.rho
        parts = [np.ones(1), c]
        if self.include_interactions:
            if self.mu_m.shape != c.shape:
                raise ValueError("mu_m length does not match the covariates")
            parts.append(z * (c - self.mu_m))
        return np.concatenate(parts), np.array([z])


def log_bf_plugin(snap: RegressionSnapshot, mix: MixtureSpec, delta0=None) -> float:
    """Gaussian plug-in approximation ``log B~`` treating ``s^2`` as known."""
    if not snap.full_rank or not snap.s2 > 0.0:
        raise ValueError("plug-in statistic needs a full-rank snapshot with s2 > 0")
    dt = snap.delta_hat - _delta0(delta0, snap.d)
    G = snap.ztilde_gram
    ML = np.linalg.cholesky(mix.phi + G)
    h = np.linalg.solve(ML, G @ dt)
    return 0.5 * mix.logdet - float(np.sum(np.log(np.diag(ML)))) + 0.5 * float(h @ h) / snap.s2


def asymptotic_region(snap: RegressionSnapshot, mix: MixtureSpec, alpha: float) -> ConfidenceRegion:
    """Inversion of :func:`log_bf_plugin`: ``||delta - delta_hat||_D^2 <= s^2 log(det(Phi+G) / (alpha^2 det Phi))``."""
    _check_alpha(alpha)
    if not snap.full_rank:
        return ConfidenceRegion("unbounded", snap.delta_hat.copy())
    G = snap.ztilde_gram
    M = mix.phi + G
    D = G @ np.linalg.solve(M, G)
    D = 0.5 * (D + D.T)
    bound = snap.s2 * (float(np.linalg.slogdet(M)[1]) - mix.logdet - 2.0 * math.log(alpha))
    return ConfidenceRegion("ellipsoid", snap.delta_hat.copy(), D, bound)


def log_bf_infinity(n: int, d: int, lam: float, omega_ztilde, delta_hat, s2: float, delta0=None) -> float:
    """Limiting form with ``Phi = lam * Omega``:
    ``(d/2) log(lam/(lam+n)) + n^2/(2(n+lam)) * dt' Omega dt / s2``."""
    if not s2 > 0.0:
        raise ValueError("s2 must be positive")
    om = np.atleast_2d(np.asarray(omega_ztilde, dtype=float))
    if cholesky_checked(om, rank_tol=0.0) is None:
        raise ValueError("omega must be positive definite")
    dt = np.atleast_1d(np.asarray(delta_hat, dtype=float)) - _delta0(delta0, d)
    q = float(dt @ om @ dt)
    return 0.5 * d * math.log(lam / (lam + n)) + 0.5 * n * n / (n + lam) * q / s2


def log_bf_g(n: int, d: int, lam: float, f_stat: float) -> float:
    """Form that needs only the classical F statistic:
    ``(d/2) log(lam/(lam+n)) + (d/2) n/(n+lam) f``."""
    if n <= 0:
        raise ValueError("n must be positive")
    return 0.5 * d * math.log(lam / (lam + n)) + 0.5 * d * n / (n + lam) * f_stat


def _limit_bound(n, d, lam, s2, alpha):
    return s2 * (n + lam) / (n * n) * (d * math.log((lam + n) / lam) - 2.0 * math.log(alpha))


def infinity_region(n: int, lam: float, omega_ztilde, delta_hat, s2: float, alpha: float) -> ConfidenceRegion:
    """Inversion of :func:`log_bf_infinity` at level ``1/alpha``.

    ``{delta : (delta - delta_hat)' Omega (delta - delta_hat) <= s2 (n + lam) / n^2 * log((lam + n)^d / (lam^d alpha^2))}``.
    For ``d = 1`` and ``Omega = rho (1 - rho)`` the half-width is :func:`ate_radius`
    with ``sigma_hat = s``.
    """
    _check_alpha(alpha)
    om = np.atleast_2d(np.asarray(omega_ztilde, dtype=float))
    center = np.atleast_1d(np.asarray(delta_hat, dtype=float)).copy()
    return ConfidenceRegion("ellipsoid", center, om, _limit_bound(n, center.size, lam, s2, alpha))


def g_region(snap: RegressionSnapshot, lam: float, alpha: float) -> ConfidenceRegion:
    """Inversion of :func:`log_bf_g`: :func:`infinity_region` with ``Omega`` estimated by ``Zt'Zt / n``."""
    if not snap.full_rank:
        return ConfidenceRegion("unbounded", snap.delta_hat.copy())
    return infinity_region(snap.n, lam, snap.ztilde_gram / snap.n, snap.delta_hat, snap.s2, alpha)


def _width_factor(n, lam, alpha):
    return math.sqrt((lam + n) / n * math.log((lam + n) / (lam * alpha * alpha)))


def ate_radius(n: int, sigma_hat: float, rho: float, lam: float, alpha: float) -> float:
    """Half-width of the asymptotic ATE confidence sequence at ``n``."""
    _check_alpha(alpha)
    if n <= 0 or not sigma_hat >= 0 or not 0 < rho < 1 or not lam > 0:
        raise ValueError("need n > 0, sigma_hat >= 0, rho in (0, 1), lam > 0")
    return sigma_hat / math.sqrt(n * rho * (1.0 - rho)) * _width_factor(n, lam, alpha)


def lambda_recommend(sigma_hat_pre: float, tau_mde: float, rho: float) -> float:
    """``sigma^2 / (tau_mde^2 rho (1 - rho))``: mixture scale tuned to an absolute MDE."""
    if not sigma_hat_pre > 0 or not tau_mde > 0 or not 0 < rho < 1:
        raise ValueError("need sigma > 0, tau_mde > 0, rho in (0, 1)")
    return sigma_hat_pre ** 2 / (tau_mde ** 2 * rho * (1.0 - rho))


def relative_width(n: int, lam: float, alpha: float) -> float:
    """Ratio of the ATE confidence-sequence width to the fixed-n Wald interval width."""
    _check_alpha(alpha)
    return _width_factor(n, lam, alpha) / math.sqrt(chi2_quantile(1, 1.0 - alpha))


def sandwich_sigma(W, resid, tau_index: int, omega_z: Optional[float] = None) -> float:
    """HC0 estimate of ``sigma`` for the ATE radius.

    Computes ``V = Omega^-1 Delta Omega^-1`` with ``Omega = W'W/n`` and
    ``Delta = sum(e_i^2 w_i w_i') / n`` and returns ``sqrt(V_tt * omega_z)``.
    When ``omega_z`` is not given it is estimated by ``1 / [Omega^-1]_tt``.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    e = np.asarray(resid, dtype=float).reshape(-1)
    n = W.shape[0]
    omega = W.T @ W / n
    delta = (W * (e * e)[:, None]).T @ W / n
    return _sandwich_from_moments(omega, delta, tau_index, omega_z)


def _sandwich_from_moments(omega, delta, tau_index, omega_z):
    L = cholesky_checked(omega)
    if L is None:
        raise ValueError("sandwich estimate needs a full-rank design")
    oinv = np.linalg.inv(omega)
    v = oinv @ delta @ oinv
    vtt = max(float(v[tau_index, tau_index]), 0.0)
    if omega_z is None:
        omega_z = 1.0 / float(oinv[tau_index, tau_index])
    return math.sqrt(vtt * omega_z)


class SandwichAccumulator:
    """Streaming HC0 moments.

    Residuals depend on the final coefficients, so the squared-residual
    outer product is expanded into ``sum y^2 ww'``, ``sum y w (x) w (x) w``
    and ``sum w (x) w (x) w (x) w``, all of which can be accumulated in one pass.
    """

    def __init__(self, k: int):
        self.k = k
        self.n = 0
        self.m2 = np.zeros((k, k))
        self.m3 = np.zeros((k, k, k))
        self.m4 = np.zeros((k, k, k, k))

    def update_many(self, W, y):
        W = np.atleast_2d(np.asarray(W, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        for w, yv in zip(W, y):
            ww = np.multiply.outer(w, w)
            self.m2 += (yv * yv) * ww
            www = np.multiply.outer(ww, w)
            self.m3 += yv * www
            self.m4 += np.multiply.outer(www, w)
        self.n += W.shape[0]

    def delta(self, gamma) -> np.ndarray:
        """``sum (y - w'gamma)^2 ww' / n`` for coefficients ``gamma``."""
        g = np.asarray(gamma, dtype=float)
        out = self.m2 - 2.0 * (self.m3 @ g) + (self.m4 @ g) @ g
        return 0.5 * (out + out.T) / self.n

    def sigma(self, gram, gamma, tau_index: int, omega_z: Optional[float] = None) -> float:
        return _sandwich_from_moments(np.asarray(gram) / self.n, self.delta(gamma), tau_index, omega_z)

    def state(self) -> dict:
        return {"n": self.n, "m2": self.m2, "m3": self.m3, "m4": self.m4}

    @classmethod
    def from_state(cls, k: int, state: dict) -> "SandwichAccumulator":
        acc = cls(k)
        acc.n = int(state["n"])
        acc.m2 = np.asarray(state["m2"], dtype=float).reshape(k, k)
        acc.m3 = np.asarray(state["m3"], dtype=float).reshape(k, k, k)
        acc.m4 = np.asarray(state["m4"], dtype=float).reshape(k, k, k, k)
        return acc
