"""Finite-size expectation bounds from observed counts.

For an observed count chi the underlying expectation is bracketed by
chi/(1+dL) and chi/(1-dU) where dL and dU solve

    [exp(dL) / (1+dL)^(1+dL)]^(chi/(1+dL)) = eps/2
    [exp(-dU) / (1-dU)^(1-dU)]^(chi/(1-dU)) = eps/2

Both equations are solved in log space by bisection; the raw form under- and
overflows for large counts.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


class BoundsError(RuntimeError):
    """Raised when the interval solver fails to converge."""


_MAX_BISECTION_STEPS = 200
_REL_TOL = 1e-12


@dataclass(frozen=True)
class ExpectationBounds:
    lower: float
    upper: float
    chi: float
    epsilon: float
    zero_count_rule: bool = False

    def __post_init__(self) -> None:
        if not (self.lower <= self.chi <= self.upper + 1e-9):
            raise BoundsError(
                f"inconsistent bounds: {self.lower} <= {self.chi} <= {self.upper}")


def _log_lhs_lower(delta: float, chi: float) -> float:
    # log of [e^d / (1+d)^(1+d)]^(chi/(1+d))
    return (chi / (1.0 + delta)) * (delta - (1.0 + delta) * math.log1p(delta))


def _log_lhs_upper(delta: float, chi: float) -> float:
    return (chi / (1.0 - delta)) * (-delta - (1.0 - delta) * math.log1p(-delta))


def _bisect(f, lo: float, hi: float) -> float:
    # f(lo) > 0 > f(hi); returns the sign change point to _REL_TOL.
    for _ in range(_MAX_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= _REL_TOL * max(abs(hi), 1e-300):
            return 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def solve_delta_lower(chi: float, epsilon: float) -> float:
    """Solve the lower-tail equation for delta on (0, inf)."""
    target = math.log(epsilon / 2.0)

    def f(d: float) -> float:
        return _log_lhs_lower(d, chi) - target

    lo, hi = 1e-12, 1.0
    # The root grows like exp(|log(eps/2)|/chi) for small chi; expand the
    # bracket geometrically instead of assuming a fixed upper end.
    while f(hi) > 0.0:
        hi *= 8.0
        if hi > 1e30:
            raise BoundsError(f"no bracket for delta_lower (chi={chi}, eps={epsilon})")
    return _bisect(f, lo, hi)


def solve_delta_upper(chi: float, epsilon: float) -> float:
    """Solve the upper-tail equation for delta on (0, 1)."""
    target = math.log(epsilon / 2.0)

    def f(d: float) -> float:
        return _log_lhs_upper(d, chi) - target

    hi = 1.0 - 1e-12
    if f(hi) > 0.0:
        # Even delta -> 1 cannot reach eps/2; the upper bound diverges.
        return hi
    return _bisect(f, 1e-12, hi)


def chernoff_bounds(chi: float, epsilon: float) -> ExpectationBounds:
    """Two-sided expectation bounds for an observed count chi >= 0.

    chi = 0 degenerates the defining equations; the standard zero-count tail
    bound (0, ln(2/eps)) is returned and flagged.
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if chi < 0:
        raise ValueError(f"chi must be nonnegative, got {chi}")
    if chi == 0:
        return ExpectationBounds(0.0, math.log(2.0 / epsilon), 0.0, epsilon,
                                 zero_count_rule=True)
    d_lo = solve_delta_lower(chi, epsilon)
    d_up = solve_delta_upper(chi, epsilon)
    return ExpectationBounds(chi / (1.0 + d_lo), chi / (1.0 - d_up), chi, epsilon)


def back_substitution_residual(chi: float, epsilon: float) -> tuple[float, float]:
    """Relative residuals of both defining equations at the solved deltas.

    Residuals are measured in the log domain relative to |log(eps/2)|.
    """
    target = math.log(epsilon / 2.0)
    d_lo = solve_delta_lower(chi, epsilon)
    d_up = solve_delta_upper(chi, epsilon)
    r_lo = abs(_log_lhs_lower(d_lo, chi) - target) / abs(target)
    r_up = abs(_log_lhs_upper(d_up, chi) - target) / abs(target)
    return r_lo, r_up
