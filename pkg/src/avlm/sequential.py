"""Exact anytime-valid F/t tests and confidence sequences.

The test statistic is the group-invariant mixture Bayes factor ``B_n``. Under
the null ``delta = delta0`` it is a nonnegative martingale with unit mean for
every value of the nuisance parameters, so ``p_n = min(1, 1/B_n)`` is a
sequential p-value and ``{delta0 : p_n(delta0) > alpha}`` is a confidence
sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from avlm.regression import RegressionSnapshot, cholesky_checked

FORMS = ("general", "scalar", "scaled_omega")
PROVENANCES = ("user", "freq_mde", "bayes_precision")


def _as_spd(mat, name: str) -> tuple[np.ndarray, np.ndarray]:
    m = np.atleast_2d(np.asarray(mat, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square matrix")
    if not np.all(np.isfinite(m)) or not np.allclose(m, m.T, rtol=1e-12, atol=0.0):
        raise ValueError(f"{name} must be finite and symmetric")
    m = 0.5 * (m + m.T)
    L = cholesky_checked(m, rank_tol=0.0)
    if L is None:
        raise ValueError(f"{name} is not positive definite")
    return m, L


@dataclass(frozen=True)
class MixtureSpec:
    """Mixture precision ``Phi`` for the effect under the alternative.

    Use the constructors rather than building instances directly.

    Attributes
    ----------
    phi : ndarray, shape (d, d)
        Symmetric positive definite precision, in units of ``sigma^-2``.
    form : {"general", "scalar", "scaled_omega"}
        How ``phi`` was specified.
    provenance : {"user", "freq_mde", "bayes_precision"}
        Where the value came from.
    source_value : float or None
        The minimum detectable effect or prior precision used, if any.
    lam : float or None
        Scale for the ``scaled_omega`` form, ``Phi = lam * omega``.
    omega : ndarray or None
        Per-observation covariance of the projected ``z`` for ``scaled_omega``.
    """

    phi: np.ndarray
    form: str = "general"
    provenance: str = "user"
    source_value: Optional[float] = None
    lam: Optional[float] = None
    omega: Optional[np.ndarray] = None
    logdet: float = field(default=math.nan, repr=False)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown mixture form {self.form!r}")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        phi, L = _as_spd(self.phi, "Phi")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "logdet", 2.0 * float(np.sum(np.log(np.diag(L)))))

    @property
    def d(self) -> int:
        return self.phi.shape[0]

    @classmethod
    def general(cls, phi) -> "MixtureSpec":
        return cls(np.asarray(phi, dtype=float), "general", "user")

    @classmethod
    def scalar(cls, phi: float) -> "MixtureSpec":
        if not phi > 0 or not math.isfinite(phi):
            raise ValueError(f"phi must be positive and finite, got {phi}")
        return cls(np.array([[float(phi)]]), "scalar", "user")

    @classmethod
    def scaled_omega(cls, lam: float, omega) -> "MixtureSpec":
        """``Phi = lam * omega``; ``lam`` is the prior sample-size equivalent."""
        if not lam > 0 or not math.isfinite(lam):
            raise ValueError(f"lambda must be positive and finite, got {lam}")
        om, _ = _as_spd(omega, "omega")
        return cls(lam * om, "scaled_omega", "user", lam=float(lam), omega=om)

    @classmethod
    def from_mde(cls, xi_mde: float, d: int = 1) -> "MixtureSpec":
        """Frequentist choice ``Phi = xi^-2 I`` from a standardised minimum detectable effect.

        For ``d > 1`` the isotropic extension is a convention, not an optimum.
        """
        v = phi_freq_optimal(xi_mde)
        form = "scalar" if d == 1 else "general"
        return cls(v * np.eye(d), form, "freq_mde", source_value=float(xi_mde))

    @classmethod
    def from_bayes(cls, zeta: float, d: int = 1) -> "MixtureSpec":
        """Bayesian choice ``Phi = zeta I`` matching the prior precision of the effect."""
        v = phi_bayes_optimal(zeta)
        form = "scalar" if d == 1 else "general"
        return cls(v * np.eye(d), form, "bayes_precision", source_value=float(zeta))


def phi_freq_optimal(xi_mde: float) -> float:
    """Mixture precision ``xi^-2`` that approximately maximises power at the MDE."""
    if not xi_mde > 0 or not math.isfinite(xi_mde):
        raise ValueError(f"minimum detectable effect must be positive, got {xi_mde}")
    return 1.0 / (xi_mde * xi_mde)


def phi_bayes_optimal(zeta: float) -> float:
    """Mixture precision matching a ``N(0, sigma^2 / zeta)`` prior on the effect."""
    if not zeta > 0 or not math.isfinite(zeta):
        raise ValueError(f"prior precision must be positive, got {zeta}")
    return float(zeta)


def _delta0(delta0, d: int) -> np.ndarray:
    v = np.zeros(d) if delta0 is None else np.atleast_1d(np.asarray(delta0, dtype=float))
    if v.shape != (d,):
        raise ValueError(f"delta0 must have length {d}")
    return v


def log_bayes_factor(snap: RegressionSnapshot, mix: MixtureSpec, delta0=None) -> float:
    """Log of the exact mixture Bayes factor against ``delta = delta0``.

    Returns 0 for rank-deficient snapshots and ``inf`` when the fit is exact
    but ``delta_hat != delta0``.
    """
    if mix.d != snap.d:
        raise ValueError(f"mixture is {mix.d}-dimensional, snapshot has d={snap.d}")
    d0 = _delta0(delta0, snap.d)
    if not snap.full_rank:
        return 0.0
    G = snap.ztilde_gram
    dt = snap.delta_hat - d0
    gd = G @ dt
    q_full = float(dt @ gd)
    ML = np.linalg.cholesky(mix.phi + G)
    h = np.linalg.solve(ML, gd)
    q_shrunk = max(q_full - float(h @ h), 0.0)
    lb = 0.5 * mix.logdet - float(np.sum(np.log(np.diag(ML))))
    rss = snap.rss
    if rss > 0.0:
        return lb - 0.5 * (snap.nu + snap.d) * (math.log1p(q_shrunk / rss) - math.log1p(q_full / rss))
    return math.inf if q_full > 0.0 else lb


def log_bayes_factor_t(snap: RegressionSnapshot, phi: float, delta0: float = 0.0) -> float:
    """Scalar-effect form of :func:`log_bayes_factor` written via the t statistic."""
    if snap.d != 1:
        raise ValueError("t-test form needs d = 1")
    if not phi > 0:
        raise ValueError(f"phi must be positive, got {phi}")
    if not snap.full_rank:
        return 0.0
    g = float(snap.ztilde_gram[0, 0])
    diff = float(snap.delta_hat[0]) - float(delta0)
    log_r = math.log(phi) - math.log(phi + g)
    nu = snap.nu
    if snap.s2 == 0.0:
        return math.inf if diff != 0.0 else 0.5 * log_r
    t2 = diff * diff * g / snap.s2
    return 0.5 * log_r - 0.5 * (nu + 1) * (math.log1p(math.exp(log_r) * t2 / nu) - math.log1p(t2 / nu))


def sequential_p(log_bf: float) -> float:
    """``min(1, exp(-log_bf))``."""
    if math.isnan(log_bf):
        return math.nan
    if log_bf <= 0.0:
        return 1.0
    return math.exp(-log_bf)


@dataclass(frozen=True)
class TestResult:
    """Outcome of the sequential test after ``n`` observations."""

    __test__ = False

    n: int
    log_bf: float
    p_instant: float
    p_running_min: float
    rejected_at_alpha: bool


class SequentialTest:
    """Running-minimum tracker for a stream of Bayes factors.

    Rejection uses the running minimum of the p-value with a closed region
    (``p <= alpha`` rejects), and stays rejected once triggered.

    Parameters
    ----------
    alpha : float
        Level in (0, 1).
    p_running_min : float, optional
        Start value, for resuming a stream.
    """

    __test__ = False

    def __init__(self, alpha: float, p_running_min: float = 1.0):
        _check_alpha(alpha)
        self.alpha = float(alpha)
        self.p_running_min = float(p_running_min)

    @property
    def rejected(self) -> bool:
        return self.p_running_min <= self.alpha

    def observe(self, n: int, log_bf: float) -> TestResult:
        p = sequential_p(log_bf)
        if p < self.p_running_min:
            self.p_running_min = p
        return TestResult(n, log_bf, p, self.p_running_min, self.rejected)


def _check_alpha(alpha: float):
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")


@dataclass(frozen=True)
class ConfidenceRegion:
    """Confidence set for ``delta``.

    ``kind`` is one of:

    * ``"ellipsoid"``: ``{delta : (delta - center)' shape (delta - center) <= bound}``;
    * ``"interval"``: ``center +/- radius``, where ``radius`` may be ``inf``;
    * ``"unbounded"``: the whole space.
    """

    kind: str
    center: np.ndarray
    shape: Optional[np.ndarray] = None
    bound: float = math.inf
    radius: float = math.inf

    def contains(self, delta) -> bool:
        v = np.atleast_1d(np.asarray(delta, dtype=float)) - self.center
        if self.kind == "unbounded":
            return True
        if self.kind == "interval":
            return abs(float(v[0])) <= self.radius
        return float(v @ self.shape @ v) <= self.bound

    def half_widths(self) -> np.ndarray:
        """Per-coordinate half-widths of the axis-aligned bounding box."""
        d = self.center.size
        if self.kind == "unbounded":
            return np.full(d, math.inf)
        if self.kind == "interval":
            return np.array([self.radius])
        return np.sqrt(self.bound * np.diag(np.linalg.inv(self.shape)))

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        h = self.half_widths()
        return self.center - h, self.center + h


def _unbounded(snap) -> ConfidenceRegion:
    return ConfidenceRegion("unbounded", np.asarray(snap.delta_hat, dtype=float).copy())


def ellipsoid_F(snap: RegressionSnapshot, mix: MixtureSpec, alpha: float) -> ConfidenceRegion:
    """Inversion of :func:`log_bayes_factor` as an ellipsoid (never an interval)."""
    _check_alpha(alpha)
    if mix.d != snap.d:
        raise ValueError(f"mixture is {mix.d}-dimensional, snapshot has d={snap.d}")
    if not snap.full_rank:
        return _unbounded(snap)
    G = snap.ztilde_gram
    M = mix.phi + G
    logdet_m = float(np.linalg.slogdet(M)[1])
    log_k = (2.0 * math.log(alpha) + mix.logdet - logdet_m) / (snap.nu + snap.d)
    A = math.expm1(log_k) * G + G @ np.linalg.solve(M, G)
    A = 0.5 * (A + A.T)
    if cholesky_checked(A, rank_tol=0.0) is None:
        return _unbounded(snap)
    bound = snap.rss * -math.expm1(log_k)
    return ConfidenceRegion("ellipsoid", snap.delta_hat.copy(), A, bound)


def confidence_region_F(snap: RegressionSnapshot, mix: MixtureSpec, alpha: float) -> ConfidenceRegion:
    """Exact anytime-valid confidence region for ``delta``.

    An ellipsoid when the quadratic form is positive definite, otherwise the
    whole space. For ``d = 1`` the ellipsoid is reported as an interval.
    """
    reg = ellipsoid_F(snap, mix, alpha)
    if snap.d == 1:
        if reg.kind == "unbounded":
            return ConfidenceRegion("interval", reg.center, radius=math.inf)
        return ConfidenceRegion("interval", reg.center, radius=math.sqrt(reg.bound / reg.shape[0, 0]))
    return reg


def t_interval_multiplier(nu: int, r: float, alpha: float) -> float:
    """``a_n`` such that the radius is ``(s / ||Zt||) sqrt(a_n)``; ``inf`` when clamped."""
    log_k = (2.0 * math.log(alpha) + math.log(r)) / (nu + 1)
    k = math.exp(log_k)
    if k <= r:
        return math.inf
    return nu * -math.expm1(log_k) / (k - r)


def confidence_interval_t(snap: RegressionSnapshot, phi: float, alpha: float) -> ConfidenceRegion:
    """Exact anytime-valid interval for a scalar effect."""
    _check_alpha(alpha)
    if snap.d != 1:
        raise ValueError("t interval needs d = 1")
    if not snap.full_rank:
        return ConfidenceRegion("interval", snap.delta_hat.copy(), radius=math.inf)
    g = float(snap.ztilde_gram[0, 0])
    a_n = t_interval_multiplier(snap.nu, phi / (phi + g), alpha)
    radius = math.inf if math.isinf(a_n) else math.sqrt(snap.s2 / g * a_n)
    return ConfidenceRegion("interval", snap.delta_hat.copy(), radius=radius)
