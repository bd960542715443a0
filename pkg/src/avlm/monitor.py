"""Streaming monitors: one observation in, one trajectory row out."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from avlm.asymptotic import (AteConfig, SandwichAccumulator, asymptotic_region, ate_radius,
                             g_region, infinity_region, log_bf_g, log_bf_infinity, log_bf_plugin)
from avlm.io import Checkpoint, TrajectoryRow
from avlm.regression import DesignPoint, RegressionSnapshot, SufficientStats, snapshot, update
from avlm.sequential import (ConfidenceRegion, MixtureSpec, SequentialTest, confidence_region_F,
                             log_bayes_factor)

MONITOR_METHODS = ("exact", "plugin", "infinity", "g")


def mixture_to_config(mix: Optional[MixtureSpec]) -> Optional[dict]:
    if mix is None:
        return None
    out = {
        "form": mix.form,
        "provenance": mix.provenance,
        "phi": [[repr(float(v)) for v in row] for row in mix.phi],
    }
    if mix.source_value is not None:
        out["source_value"] = repr(mix.source_value)
    if mix.lam is not None:
        out["lambda"] = repr(mix.lam)
        out["omega"] = [[repr(float(v)) for v in row] for row in mix.omega]
    return out


def mixture_from_config(cfg: Optional[dict]) -> Optional[MixtureSpec]:
    if cfg is None:
        return None
    if cfg.get("form") == "scaled_omega":
        mix = MixtureSpec.scaled_omega(float(cfg["lambda"]), np.array(cfg["omega"], dtype=float))
    else:
        mix = MixtureSpec(np.array(cfg["phi"], dtype=float), cfg.get("form", "general"),
                          cfg.get("provenance", "user"),
                          float(cfg["source_value"]) if "source_value" in cfg else None)
    return mix


class Monitor:
    """Sequential test of ``delta = delta0`` on a stream of design points.

    Parameters
    ----------
    p, d : int
        Model dimensions.
    alpha : float
        Level.
    method : {"exact", "plugin", "infinity", "g"}
        Which Bayes factor drives the p-value and the confidence region.
    mixture : MixtureSpec, optional
        Needed by ``exact``, ``plugin`` and ``infinity``. ``infinity``
        and ``g`` read ``lambda`` from it (``g`` also accepts ``lam``).
    delta0 : array_like, optional
        Null value; zero by default.
    """

    def __init__(self, p: int, d: int, alpha: float, method: str = "exact",
                 mixture: Optional[MixtureSpec] = None, delta0=None, lam: Optional[float] = None,
                 stats: Optional[SufficientStats] = None, p_running_min: float = 1.0,
                 tau: Optional[int] = None):
        if method not in MONITOR_METHODS:
            raise ValueError(f"method must be one of {MONITOR_METHODS}")
        if mixture is not None and mixture.d != d:
            raise ValueError(f"mixture is {mixture.d}-dimensional, model has d={d}")
        if method in ("exact", "plugin") and mixture is None:
            raise ValueError(f"method {method!r} needs a mixture")
        if method == "infinity" and (mixture is None or mixture.form != "scaled_omega"):
            raise ValueError("method 'infinity' needs a lambda * Omega mixture")
        self.lam = lam if lam is not None else (mixture.lam if mixture is not None else None)
        if method == "g" and self.lam is None:
            raise ValueError("method 'g' needs lambda")
        self.p, self.d, self.method, self.mixture = p, d, method, mixture
        self.delta0 = np.zeros(d) if delta0 is None else np.atleast_1d(np.asarray(delta0, dtype=float))
        if self.delta0.shape != (d,):
            raise ValueError(f"delta0 must have length {d}")
        self.stats = stats if stats is not None else SufficientStats(p, d)
        self.test = SequentialTest(alpha, p_running_min)
        self.tau = tau

    @property
    def alpha(self) -> float:
        return self.test.alpha

    def config(self) -> dict:
        return {
            "alpha": repr(self.alpha),
            "delta0": [repr(float(v)) for v in self.delta0],
            "method": self.method,
            "mixture": mixture_to_config(self.mixture),
            "lambda": None if self.lam is None else repr(self.lam),
        }

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "Monitor":
        cfg = ck.config
        if cfg.get("kind", "monitor") != "monitor":
            raise ValueError("checkpoint was not written by a monitor run")
        lam = cfg.get("lambda")
        return cls(ck.stats.p, ck.stats.d, float(cfg["alpha"]), cfg["method"],
                   mixture_from_config(cfg.get("mixture")), [float(v) for v in cfg["delta0"]],
                   None if lam is None else float(lam), ck.stats, ck.p_running_min, ck.tau)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.stats.copy(), {"kind": "monitor", **self.config()},
                          self.test.p_running_min, self.tau)

    def _statistic(self, snap: RegressionSnapshot) -> tuple[float, ConfidenceRegion]:
        if self.method == "exact":
            return log_bayes_factor(snap, self.mixture, self.delta0), confidence_region_F(snap, self.mixture, self.alpha)
        dt = snap.delta_hat - self.delta0
        q = float(dt @ snap.ztilde_gram @ dt)
        if self.method == "plugin":
            region = asymptotic_region(snap, self.mixture, self.alpha)
            if snap.s2 == 0.0:
                return (math.inf if q > 0 else 0.0), region
            return log_bf_plugin(snap, self.mixture, self.delta0), region
        if self.method == "infinity":
            region = infinity_region(snap.n, self.lam, self.mixture.omega, snap.delta_hat, snap.s2, self.alpha)
            if snap.s2 == 0.0:
                return (math.inf if q > 0 else 0.0), region
            return log_bf_infinity(snap.n, self.d, self.lam, self.mixture.omega, snap.delta_hat,
                                   snap.s2, self.delta0), region
        region = g_region(snap, self.lam, self.alpha)
        f = q / (self.d * snap.s2) if snap.s2 > 0 else (math.inf if q > 0 else 0.0)
        return log_bf_g(snap.n, self.d, self.lam, f), region

    def push(self, pt: DesignPoint) -> Optional[TrajectoryRow]:
        """Add one observation; returns a row once the design has full rank."""
        update(self.stats, pt)
        snap = snapshot(self.stats)
        if not snap.full_rank:
            self.test.observe(snap.n, 0.0)
            return None
        log_bf, region = self._statistic(snap)
        res = self.test.observe(snap.n, log_bf)
        if res.rejected_at_alpha and self.tau is None:
            self.tau = snap.n
        lo, hi = region.bounds()
        return TrajectoryRow(snap.n, snap.delta_hat.copy(), snap.se, log_bf, res.p_instant,
                             res.p_running_min, lo, hi)


class AteMonitor:
    """Regression-adjusted ATE confidence sequence on a stream of units.

    Each unit supplies covariates, a 0/1 treatment and an outcome. The
    regression is ``y ~ 1 + covariates [+ interactions] + (T - rho)``.
    """

    def __init__(self, config: AteConfig, alpha: float, n_covariates: int, tau0: float = 0.0,
                 stats: Optional[SufficientStats] = None, sandwich: Optional[SandwichAccumulator] = None,
                 p_running_min: float = 1.0, tau: Optional[int] = None):
        self.cfg = config
        self.n_covariates = n_covariates
        p = 1 + n_covariates * (2 if config.include_interactions else 1)
        self.stats = stats if stats is not None else SufficientStats(p, 1)
        if self.stats.p != p:
            raise ValueError(f"state has p={self.stats.p}, configuration implies p={p}")
        self.sandwich = None
        if config.estimator == "hc0":
            self.sandwich = sandwich if sandwich is not None else SandwichAccumulator(p + 1)
        self.tau0 = float(tau0)
        self.test = SequentialTest(alpha, p_running_min)
        self.tau = tau

    @property
    def alpha(self) -> float:
        return self.test.alpha

    def config(self) -> dict:
        c = self.cfg
        return {
            "kind": "ate",
            "alpha": repr(self.alpha),
            "delta0": [repr(self.tau0)],
            "rho": repr(c.rho),
            "lambda": repr(c.lam),
            "sigma_estimator": c.estimator,
            "include_interactions": c.include_interactions,
            "mu_m": None if c.mu_m is None else [repr(float(v)) for v in c.mu_m],
            "n_covariates": self.n_covariates,
        }

    def checkpoint(self) -> Checkpoint:
        sw = None
        if self.sandwich is not None:
            sw = SandwichAccumulator.from_state(self.sandwich.k, {k: np.copy(v) for k, v in self.sandwich.state().items()})
        return Checkpoint(self.stats.copy(), self.config(), self.test.p_running_min, self.tau, sw)

    @classmethod
    def from_checkpoint(cls, ck: Checkpoint) -> "AteMonitor":
        c = ck.config
        if c.get("kind") != "ate":
            raise ValueError("checkpoint was not written by an ate run")
        cfg = AteConfig(float(c["rho"]), float(c["lambda"]), c["sigma_estimator"],
                        None if c.get("mu_m") is None else [float(v) for v in c["mu_m"]],
                        bool(c["include_interactions"]))
        return cls(cfg, float(c["alpha"]), int(c["n_covariates"]), float(c["delta0"][0]),
                   ck.stats, ck.sandwich, ck.p_running_min, ck.tau)

    def sigma_hat(self, snap: RegressionSnapshot) -> float:
        if self.sandwich is None:
            return math.sqrt(snap.s2)
        gamma = np.concatenate([snap.beta_hat, snap.delta_hat])
        return self.sandwich.sigma(self.stats.gram, gamma, self.stats.p, self.cfg.omega)

    def push(self, covariates, treated: float, y: float) -> Optional[TrajectoryRow]:
        x, z = self.cfg.design_row(covariates, treated)
        pt = DesignPoint(x, z, y)
        update(self.stats, pt)
        if self.sandwich is not None:
            self.sandwich.update_many(pt.w[None, :], [pt.y])
        snap = snapshot(self.stats)
        if not snap.full_rank:
            self.test.observe(snap.n, 0.0)
            return None
        n, rho, lam = snap.n, self.cfg.rho, self.cfg.lam
        sigma = self.sigma_hat(snap)
        est = float(snap.delta_hat[0])
        radius = ate_radius(n, sigma, rho, lam, self.alpha)
        if sigma > 0:
            log_bf = log_bf_infinity(n, 1, lam, [[self.cfg.omega]], [est], sigma * sigma, [self.tau0])
        else:
            log_bf = math.inf if est != self.tau0 else 0.5 * math.log(lam / (lam + n))
        res = self.test.observe(n, log_bf)
        if res.rejected_at_alpha and self.tau is None:
            self.tau = n
        se = sigma / math.sqrt(n * self.cfg.omega)
        return TrajectoryRow(n, np.array([est]), np.array([se]), log_bf, res.p_instant,
                             res.p_running_min, np.array([est - radius]), np.array([est + radius]))
