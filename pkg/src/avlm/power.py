"""Fixed-n power analysis and the anytime-valid rejection-probability bound.

Both use the alternating design, whose projected gram ``||Zt_n||^2`` is
deterministic, so the F statistic at ``n`` is exactly noncentral F.
"""

from __future__ import annotations

import math
from typing import Optional

from avlm.dgp import AlternatingDesign
from avlm.distributions import NoncentralF, f_quantile, ncf_sf
from avlm.sequential import _check_alpha, phi_freq_optimal, t_interval_multiplier

MAX_N = 10 ** 9


def fixed_n_power(n: int, xi: float, alpha: float, design: Optional[AlternatingDesign] = None) -> float:
    """Power of the level-``alpha`` fixed-n F-test at ``n`` against standardised effect ``xi``."""
    design = design or AlternatingDesign()
    nu = n - design.p - design.d
    if nu < 1:
        return 0.0
    g = design.ztilde_norm2(n)
    crit = f_quantile(design.d, nu, 1.0 - alpha)
    return ncf_sf(NoncentralF(design.d, nu, g * xi * xi), crit)


def fixed_n_sample_size(xi_mde: float, alpha: float, power_target: float,
                        design: Optional[AlternatingDesign] = None) -> int:
    """Smallest ``n`` at which the fixed-n F-test reaches ``power_target``.

    Exponential search for an upper bracket, then bisection. The answer is
    never below ``p + d + 2``.

    Raises
    ------
    ValueError
        If the target is out of range or cannot be met for any ``n``.
    """
    _check_alpha(alpha)
    if not 0.0 < power_target < 1.0:
        raise ValueError(f"power target must lie in (0, 1), got {power_target}")
    design = design or AlternatingDesign()
    floor = design.p + design.d + 2
    if xi_mde == 0.0 and power_target > alpha:
        raise ValueError("power target above alpha is unattainable with zero effect")

    def ok(n):
        return fixed_n_power(n, xi_mde, alpha, design) >= power_target

    if ok(floor):
        return floor
    lo, hi = floor, floor * 2
    while not ok(hi):
        lo, hi = hi, hi * 2
        if hi > MAX_N:
            raise ValueError(f"power {power_target} not reached for n <= {MAX_N}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


def rejection_prob_at_n(n: int, xi_true: float, xi_mde: float, alpha: float,
                        design: Optional[AlternatingDesign] = None) -> float:
    """Lower bound on ``P[min_{i <= n} p_i <= alpha]`` for the exact t-test.

    Equals ``P[f_n > a_n]`` where ``a_n`` is the confidence-sequence
    multiplier with ``phi = xi_mde^-2`` and ``f_n`` is noncentral
    ``F(1, nu_n, ||Zt_n||^2 xi_true^2)``.
    """
    _check_alpha(alpha)
    design = design or AlternatingDesign()
    nu = n - design.p - design.d
    if nu < 1:
        return 0.0
    g = design.ztilde_norm2(n)
    phi = phi_freq_optimal(xi_mde)
    a_n = t_interval_multiplier(nu, phi / (phi + g), alpha)
    if math.isinf(a_n):
        return 0.0
    return ncf_sf(NoncentralF(1, nu, g * xi_true * xi_true), a_n)
