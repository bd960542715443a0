"""Monte Carlo harness for stopping times and confidence-sequence coverage.

Every replication owns an independent counter-based RNG stream derived from
``(base_seed, replication index)``, and data are generated in fixed-size
blocks, so results do not depend on the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special

from avlm import kernel
from avlm.regression import RANK_TOL
from avlm.sequential import MixtureSpec, _check_alpha

METHODS = ("exact", "asymptotic", "fixed")
METHOD_LABELS = {"exact": "AnytimeExact", "asymptotic": "AnytimeAsymptotic", "fixed": "FixedNRepeated"}
CHUNK = 256


def replication_rng(base_seed: int, rep: int) -> np.random.Generator:
    """Independent Philox stream for replication ``rep``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(base_seed, spawn_key=(rep,))))


@dataclass(frozen=True)
class StoppingTimeSample:
    """One replication's outcome.

    ``tau`` is the first ``n`` with running-minimum p-value ``<= alpha``; when
    no rejection happens by ``n_max`` the sample is censored and ``tau``
    holds ``n_max``.
    """

    seed: int
    replication: int
    tau: int
    censored: bool
    method: str

    @property
    def rejected(self) -> bool:
        return not self.censored


class _PathState:
    """Sufficient statistics plus per-block output buffers for one path."""

    def __init__(self, k: int, d: int, size: int):
        self.gram = np.zeros((k, k))
        self.gram_c = np.zeros((k, k))
        self.cross = np.zeros(k)
        self.cross_c = np.zeros(k)
        self.yty = np.zeros(2)
        self.full_rank = np.zeros(size, dtype=np.int8)
        self.delta_hat = np.zeros((size, d))
        self.s2 = np.zeros(size)
        self.ztz = np.zeros((size, d, d))
        self.f = np.zeros(size)
        self.log_bf = np.zeros(size)

    def trace(self, n0, W, y, d, phi, logdet_phi, delta0):
        m = W.shape[0]
        kernel.trace(self.gram, self.gram_c, self.cross, self.cross_c, self.yty, n0,
                     np.ascontiguousarray(W), np.ascontiguousarray(y), d, phi, logdet_phi,
                     delta0, RANK_TOL, self.full_rank[:m], self.delta_hat[:m], self.s2[:m],
                     self.ztz[:m], self.f[:m], self.log_bf[:m])


def _as_mixture(mixture: Union[MixtureSpec, float], d: int) -> MixtureSpec:
    if isinstance(mixture, MixtureSpec):
        if mixture.d != d:
            raise ValueError(f"mixture is {mixture.d}-dimensional, process has d={d}")
        return mixture
    return MixtureSpec.general(float(mixture) * np.eye(d))


def _p_values(method, st: _PathState, m, n0, d, mix, delta0):
    n = np.arange(n0 + 1, n0 + m + 1, dtype=float)
    fr = st.full_rank[:m].astype(bool)
    if method == "exact":
        return np.exp(-st.log_bf[:m])
    p = np.ones(m)
    if method == "fixed":
        nu = n - st.gram.shape[0]
        with np.errstate(invalid="ignore"):
            p[fr] = special.fdtrc(d, nu[fr], st.f[:m][fr])
        return p
    # asymptotic: Phi = lam * Omega limit form
    dt = st.delta_hat[:m] - delta0
    q = np.einsum("ri,ij,rj->r", dt, mix.omega, dt)
    lam = mix.lam
    with np.errstate(divide="ignore", invalid="ignore"):
        lb = 0.5 * d * np.log(lam / (lam + n)) + 0.5 * n * n / (n + lam) * q / st.s2[:m]
    ok = fr & (st.s2[:m] > 0)
    p[ok] = np.exp(-lb[ok])
    p[fr & (st.s2[:m] == 0) & (q > 0)] = 0.0
    return p


def _one_path(dgp, method, alpha, mix, n_max, base_seed, rep, delta0) -> StoppingTimeSample:
    rng = replication_rng(base_seed, rep)
    k, d = dgp.p + dgp.d, dgp.d
    st = _PathState(k, d, CHUNK)
    n = 0
    while n < n_max:
        m = min(CHUNK, n_max - n)
        W, y = dgp.chunk(rng, n, m)
        st.trace(n, W, y, d, mix.phi, mix.logdet, delta0)
        p = _p_values(method, st, m, n, d, mix, delta0)
        hit = np.flatnonzero(p <= alpha)
        if hit.size:
            return StoppingTimeSample(base_seed, rep, n + int(hit[0]) + 1, False, METHOD_LABELS[method])
        n += m
    return StoppingTimeSample(base_seed, rep, n_max, True, METHOD_LABELS[method])


def _run_parallel(fn, replications: int, threads: int):
    if threads <= 1:
        return [fn(r) for r in range(replications)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, range(replications)))


def simulate_stopping_times(dgp, method: str, alpha: float, mixture: Union[MixtureSpec, float],
                            n_max: int, replications: int, base_seed: int, threads: int = 1,
                            delta0=None) -> list[StoppingTimeSample]:
    """Stream each replication until the running-minimum p-value reaches ``alpha``.

    Parameters
    ----------
    dgp
        A process from :mod:`avlm.dgp`.
    method : {"exact", "asymptotic", "fixed"}
        ``"exact"`` is the exact mixture test. ``"asymptotic"`` is the
        limiting form with ``Phi = lam * Omega`` and needs a
        ``MixtureSpec.scaled_omega`` mixture. ``"fixed"`` applies the
        classical F-test at every ``n`` once the design has full rank.
    mixture : MixtureSpec or float
        A float is read as ``Phi = phi * I``.
    n_max, replications : int
        Truncation point and number of paths.
    base_seed : int
        Root of the per-replication seed tree.
    threads : int
        Worker threads. Output is identical for any value.

    Returns
    -------
    list of StoppingTimeSample
        Ordered by replication index.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    if replications < 1:
        raise ValueError("replications must be >= 1")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    _check_alpha(alpha)
    mix = _as_mixture(mixture, dgp.d)
    if method == "asymptotic" and mix.form != "scaled_omega":
        raise ValueError("asymptotic method needs a lambda * Omega mixture")
    d0 = np.zeros(dgp.d) if delta0 is None else np.atleast_1d(np.asarray(delta0, dtype=float))
    return _run_parallel(lambda r: _one_path(dgp, method, alpha, mix, n_max, base_seed, r, d0),
                         replications, threads)


def ecdf_summary(samples: Sequence[StoppingTimeSample], grid: Optional[Sequence[int]] = None,
                 n_max: Optional[int] = None) -> list[tuple[int, float]]:
    """Fraction of replications stopped by ``n``.

    Without a ``grid`` the curve is reported at ``0``, at every distinct
    stopping time and at the truncation point.
    """
    if not samples:
        raise ValueError("no samples")
    taus = np.array([s.tau for s in samples if not s.censored], dtype=np.int64)
    total = len(samples)
    if n_max is None:
        n_max = max(s.tau for s in samples)
    if grid is None:
        grid = sorted(set(taus.tolist()) | {0, int(n_max)})
    taus.sort()
    return [(int(g), float(np.searchsorted(taus, g, side="right")) / total) for g in grid]


def stopping_time_stats(samples: Sequence[StoppingTimeSample]) -> dict:
    """Mean, median and standard error of ``tau`` (censored paths counted at ``n_max``)."""
    t = np.array([s.tau for s in samples], dtype=float)
    return {
        "reps": len(samples),
        "rejections": int(sum(not s.censored for s in samples)),
        "mean": float(t.mean()),
        "median": float(np.median(t)),
        "se": float(t.std(ddof=1) / math.sqrt(len(t))) if len(t) > 1 else math.nan,
    }


def _ate_path(dgp, alpha, lam, n_max, base_seed, rep, tau_true) -> bool:
    rng = replication_rng(base_seed, rep)
    k = dgp.p + dgp.d
    st = _PathState(k, 1, CHUNK)
    omega = dgp.rho * (1.0 - dgp.rho)
    phi = np.array([[lam * omega]])
    zero = np.zeros(1)
    n = 0
    while n < n_max:
        m = min(CHUNK, n_max - n)
        W, y = dgp.chunk(rng, n, m)
        st.trace(n, W, y, 1, phi, math.log(phi[0, 0]), zero)
        fr = st.full_rank[:m].astype(bool)
        nn = np.arange(n + 1, n + m + 1, dtype=float)[fr]
        radius = np.sqrt(st.s2[:m][fr] / (nn * omega) * (lam + nn) / nn
                         * np.log((lam + nn) / (lam * alpha * alpha)))
        if np.any(np.abs(st.delta_hat[:m, 0][fr] - tau_true) > radius):
            return False
        n += m
    return True


def simulate_ate_coverage(dgp, alpha: float, lam: float, n_max: int, replications: int,
                          base_seed: int, tau_true: Optional[float] = None, threads: int = 1) -> list[bool]:
    """Whether each replication's ATE confidence sequence covers ``tau_true`` at every ``n <= n_max``.

    Uses the model-based ``s`` as ``sigma_hat``. ``tau_true`` defaults to the
    process's ``delta``.
    """
    _check_alpha(alpha)
    if replications < 1:
        raise ValueError("replications must be >= 1")
    tau = dgp.delta if tau_true is None else float(tau_true)
    return _run_parallel(lambda r: _ate_path(dgp, alpha, lam, n_max, base_seed, r, tau),
                         replications, threads)
