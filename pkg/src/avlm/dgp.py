"""Data-generating processes for the stopping-time simulations.

Each process can produce rows one at a time (``draw``) or in blocks
(``chunk``). Blocks are what the simulation harness uses; they are laid out
as ``W = [X, Z]`` and ``y`` arrays ready for the compiled kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from avlm.regression import DesignPoint


@dataclass(frozen=True)
class AlternatingDesign:
    """``y_i = beta + delta z_i + eps_i`` with ``z_i = 1`` on even ``i`` (1-indexed) and 0 otherwise.

    The nuisance design is an intercept only, so ``p = d = 1`` and the
    projected gram ``||Zt_n||^2`` is deterministic.
    """

    beta: float = 1.0
    delta: float = 0.2
    sigma2: float = 1.5

    p = 1
    d = 1
    name = "alternating"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")

    @property
    def xi(self) -> float:
        """Standardised effect ``delta / sigma``."""
        return self.delta / math.sqrt(self.sigma2)

    @staticmethod
    def ztilde_norm2(n: int) -> float:
        """``||Zt_n||^2``: ``n/4`` for even ``n`` and ``(n^2 - 1)/(4n)`` for odd ``n``."""
        if n % 2 == 0:
            return n / 4.0
        return (n * n - 1.0) / (4.0 * n)

    def chunk(self, rng: np.random.Generator, start: int, size: int):
        i = np.arange(start + 1, start + size + 1)
        z = (i % 2 == 0).astype(float)
        W = np.column_stack([np.ones(size), z])
        y = self.beta + self.delta * z + math.sqrt(self.sigma2) * rng.standard_normal(size)
        return W, y

    def draw(self, rng: np.random.Generator, i: int = 0) -> DesignPoint:
        W, y = self.chunk(rng, i, 1)
        return DesignPoint(W[0, :1], W[0, 1:], y[0])


NONLINEAR_COV = np.array([[0.8 ** abs(i - j) for j in range(3)] for i in range(3)])
T5_SCALE = 1.5


@dataclass(frozen=True)
class NonlinearModel:
    """Misspecified randomized experiment.

    ``y = 1 - 2 x1^2 - 2 sin(x2) + 3 |x3| + delta z + eps`` with
    ``x ~ N(0, S)``, ``S_ij = 0.8^|i-j|``, ``eps = 1.5 t_5`` and the centred
    treatment ``z = T - rho``, ``T ~ Bernoulli(rho)``. The analysis model is
    linear: ``X = [1, x1, x2, x3]``, ``Z = [z]``.
    """

    delta: float = 0.0
    rho: float = 0.5

    p = 4
    d = 1
    name = "nonlinear"

    def __post_init__(self):
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")

    def chunk(self, rng: np.random.Generator, start: int, size: int):
        x = rng.multivariate_normal(np.zeros(3), NONLINEAR_COV, size=size, method="cholesky")
        z = (rng.random(size) < self.rho).astype(float) - self.rho
        eps = T5_SCALE * rng.standard_t(5, size=size)
        y = 1.0 - 2.0 * x[:, 0] ** 2 - 2.0 * np.sin(x[:, 1]) + 3.0 * np.abs(x[:, 2]) + self.delta * z + eps
        W = np.column_stack([np.ones(size), x, z])
        return W, y

    def draw(self, rng: np.random.Generator, i: int = 0) -> DesignPoint:
        W, y = self.chunk(rng, i, 1)
        return DesignPoint(W[0, :4], W[0, 4:], y[0])


def nonlinear_dgp_draw(rng: np.random.Generator, delta: float = 0.0, rho: float = 0.5) -> DesignPoint:
    return NonlinearModel(delta, rho).draw(rng)


@dataclass(frozen=True)
class BootstrapEmpirical:
    """Resample outcomes from empirical arm samples.

    Parameters
    ----------
    control, treatment : array_like
        Outcome samples, shape ``(m,)`` or ``(m, 2)`` with columns
        ``(outcome, pre-period outcome)``.
    rho : float
        Treatment probability.
    mode : {"ab", "aa"}
        ``"aa"`` resamples both arms from ``control``.
    use_pre : bool
        Add the pre-period outcome as a nuisance regressor. Needs two-column
        samples.
    """

    control: np.ndarray
    treatment: Optional[np.ndarray] = None
    rho: float = 0.5
    mode: str = "ab"
    use_pre: bool = False

    d = 1
    name = "bootstrap"

    def __post_init__(self):
        ctl = np.asarray(self.control, dtype=float)
        trt = ctl if self.treatment is None else np.asarray(self.treatment, dtype=float)
        if ctl.shape[0] == 0 or trt.shape[0] == 0:
            raise ValueError("empirical samples must be nonempty")
        if ctl.ndim == 1:
            ctl = ctl[:, None]
        if trt.ndim == 1:
            trt = trt[:, None]
        if self.use_pre and (ctl.shape[1] < 2 or trt.shape[1] < 2):
            raise ValueError("use_pre needs samples with a pre-period column")
        if self.mode not in ("ab", "aa"):
            raise ValueError("mode must be 'ab' or 'aa'")
        if not 0 < self.rho < 1:
            raise ValueError("rho must lie in (0, 1)")
        object.__setattr__(self, "control", ctl)
        object.__setattr__(self, "treatment", ctl if self.mode == "aa" else trt)

    @property
    def p(self) -> int:
        return 2 if self.use_pre else 1

    def chunk(self, rng: np.random.Generator, start: int, size: int):
        t = rng.random(size) < self.rho
        ic = rng.integers(0, self.control.shape[0], size=size)
        it = rng.integers(0, self.treatment.shape[0], size=size)
        rows = np.where(t[:, None], self.treatment[it], self.control[ic])
        z = t.astype(float) - self.rho
        cols = [np.ones(size)]
        if self.use_pre:
            cols.append(rows[:, 1])
        cols.append(z)
        return np.column_stack(cols), rows[:, 0].copy()

    def draw(self, rng: np.random.Generator, i: int = 0) -> DesignPoint:
        W, y = self.chunk(rng, i, 1)
        return DesignPoint(W[0, :-1], W[0, -1:], y[0])


def bootstrap_dgp_draw(rng: np.random.Generator, spec: BootstrapEmpirical) -> DesignPoint:
    return spec.draw(rng)


@dataclass(frozen=True)
class Custom:
    """User-supplied block generator ``fn(rng, start, size) -> (W, y)``."""

    fn: Callable = field(repr=False)
    p: int = 1
    d: int = 1
    name: str = "custom"

    def chunk(self, rng, start, size):
        W, y = self.fn(rng, start, size)
        return np.asarray(W, dtype=float), np.asarray(y, dtype=float)

    def draw(self, rng, i: int = 0) -> DesignPoint:
        W, y = self.chunk(rng, i, 1)
        return DesignPoint(W[0, :self.p], W[0, self.p:], y[0])
