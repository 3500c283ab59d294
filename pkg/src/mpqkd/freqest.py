"""Laser frequency-difference estimation from reference-region clicks.

Clicks are grouped so each group spans less than a millisecond (the
frequency difference is treated as constant within a group), a grouped
maximum-likelihood estimate is found by grid search plus golden-section
refinement, and a least-squares polynomial ties the per-group estimates
into a trajectory whose integral supplies accumulated phases to the key
mapping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .sim import ReferenceClicks

MAX_GROUP_SPAN_S = 1e-3
# A click carries about half a radian of phase information, so resolving a
# few-Hz frequency offset over a millisecond needs several thousand clicks;
# the pair budget bounds the quadratic cost instead of the click count.
MAX_GROUP_CLICKS = 20_000
MAX_GROUP_PAIRS = 250_000
GRID_POINTS = 10_000
GOLDEN_REL_TOL = 1e-6
DEFAULT_WINDOW_GROUPS = 200
DEFAULT_SEARCH_RANGE = (-2 * math.pi * 2e5, 2 * math.pi * 2e5)


class FreqEstError(ValueError):
    pass


@dataclass
class ClickGroup:
    """Time-ordered reference clicks spanning less than the group cap."""

    time_s: np.ndarray
    detector: np.ndarray

    def __post_init__(self) -> None:
        if len(self.time_s) and self.span_s >= MAX_GROUP_SPAN_S:
            raise FreqEstError(f"group spans {self.span_s:.2e}s >= 1 ms")

    @property
    def span_s(self) -> float:
        return float(self.time_s[-1] - self.time_s[0])

    @property
    def t_mid(self) -> float:
        return 0.5 * float(self.time_s[0] + self.time_s[-1])

    def __len__(self) -> int:
        return len(self.time_s)


def group_clicks(clicks: ReferenceClicks,
                 max_span_s: float = MAX_GROUP_SPAN_S) -> list[ClickGroup]:
    """Greedy left-to-right grouping; singleton groups are dropped."""
    t = np.asarray(clicks.time_s)
    det = np.asarray(clicks.detector)
    if len(t) > 1 and np.any(np.diff(t) <= 0):
        raise FreqEstError("reference clicks must be strictly time-ordered")
    groups: list[ClickGroup] = []
    start = 0
    for k in range(1, len(t) + 1):
        if k == len(t) or t[k] - t[start] >= max_span_s:
            if k - start >= 2:
                groups.append(ClickGroup(t[start:k], det[start:k]))
            start = k
    return groups


def _pair_arrays(group: ClickGroup, tau_s: float, rng_seed: int = 0):
    """Unordered click pairs as (index separations, same-detector flags).

    Clicks beyond the group cap are thinned, and the quadratic pair set is
    subsampled down to the pair budget; both deterministically.
    """
    t = group.time_s
    det = group.detector
    rng = np.random.Generator(np.random.Philox(key=rng_seed))
    if len(t) > MAX_GROUP_CLICKS:
        keep = np.sort(rng.choice(len(t), MAX_GROUP_CLICKS, replace=False))
        t = t[keep]
        det = det[keep]
    n = len(t)
    n_pairs = n * (n - 1) // 2
    if n_pairs <= MAX_GROUP_PAIRS:
        iu = np.triu_indices(n, k=1)
        i, j = iu[0], iu[1]
    else:
        i = rng.integers(0, n, 2 * MAX_GROUP_PAIRS, dtype=np.int64)
        j = rng.integers(0, n, 2 * MAX_GROUP_PAIRS, dtype=np.int64)
        keep = i != j
        i, j = i[keep][:MAX_GROUP_PAIRS], j[keep][:MAX_GROUP_PAIRS]
    seps = np.rint(np.abs(t[j] - t[i]) / tau_s)
    same = det[i] == det[j]
    return seps, same


def _log_likelihood(omegas: np.ndarray, seps: np.ndarray,
                    same: np.ndarray, tau_s: float) -> np.ndarray:
    """Grouped MLE objective on an array of trial frequencies."""
    sign = np.where(same, 1.0, -1.0)
    out = np.empty(len(omegas))
    chunk = max(1, int(4e6 / max(len(seps), 1)))
    for lo in range(0, len(omegas), chunk):
        om = omegas[lo:lo + chunk]
        phases = om[:, None] * (tau_s * seps)[None, :]
        out[lo:lo + chunk] = np.log(0.5 + 0.25 * sign * np.cos(phases)).sum(axis=1)
    return out


# Full grid x full pair set is quadratically expensive; the grid is first
# screened with a pair subsample and only the best candidates get the exact
# likelihood.
SCREEN_PAIRS = 20_000
SCREEN_CANDIDATES = 256


def estimate_group_omega(group: ClickGroup,
                         search_range: tuple[float, float] = DEFAULT_SEARCH_RANGE,
                         tau_s: float = 1.6e-9) -> float:
    """Maximize the pairwise click-correlation likelihood over the range.

    Uniform grid search (<= range/1e4 spacing) followed by golden-section
    refinement around the best grid point.  Likelihood ties break toward the
    smallest |omega|.
    """
    if len(group) < 2:
        raise FreqEstError("need at least 2 clicks per group")
    lo, hi = search_range
    if not lo < hi:
        raise FreqEstError(f"invalid search range {search_range}")
    seps, same = _pair_arrays(group, tau_s)
    grid = np.linspace(lo, hi, GRID_POINTS + 1)
    if len(seps) > SCREEN_PAIRS:
        rng = np.random.Generator(np.random.Philox(key=len(seps)))
        sub = rng.choice(len(seps), SCREEN_PAIRS, replace=False)
        coarse = _log_likelihood(grid, seps[sub], same[sub], tau_s)
        cand = np.argsort(coarse)[-SCREEN_CANDIDATES:]
        f_cand = _log_likelihood(grid[cand], seps, same, tau_s)
        f = np.full(len(grid), -np.inf)
        f[cand] = f_cand
    else:
        f = _log_likelihood(grid, seps, same, tau_s)
    best = f.max()
    ties = np.nonzero(f >= best - 1e-12 * abs(best))[0]
    k = ties[np.argmin(np.abs(grid[ties]))]
    a = grid[max(0, k - 1)]
    b = grid[min(len(grid) - 1, k + 1)]
    return _golden_max(lambda om: float(_log_likelihood(
        np.array([om]), seps, same, tau_s)[0]), a, b)


def _golden_max(f, a: float, b: float) -> float:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    scale = max(abs(a), abs(b), 1.0)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > GOLDEN_REL_TOL * scale:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


@dataclass
class OmegaTrajectory:
    """Piecewise-polynomial frequency difference over the session.

    Each segment holds ascending-power coefficients valid on
    [t_start, t_end]; the integral is closed-form per segment.
    """

    segments: list[tuple[float, float, np.ndarray]] = field(default_factory=list)
    fit_residual: float = 0.0

    def _segment(self, t: float):
        for lo, hi, coeffs in self.segments:
            if lo <= t <= hi:
                return lo, hi, coeffs
        raise FreqEstError(f"time {t} outside the fitted trajectory")

    def omega(self, t: float) -> float:
        _, _, coeffs = self._segment(t)
        return float(sum(c * t ** k for k, c in enumerate(coeffs)))

    def _antiderivative(self, coeffs: np.ndarray, t: float) -> float:
        return float(sum(c * t ** (k + 1) / (k + 1)
                         for k, c in enumerate(coeffs)))

    def integral(self, t_i: float, t_j: float) -> float:
        if t_j < t_i:
            raise FreqEstError("need t_i <= t_j")
        self._segment(t_i)
        self._segment(t_j)
        # Segments abut and are time-ordered; sum the overlap integrals.
        total = 0.0
        for lo, hi, coeffs in self.segments:
            a = max(lo, t_i)
            b = min(hi, t_j)
            if b > a:
                total += (self._antiderivative(coeffs, b)
                          - self._antiderivative(coeffs, a))
        return total


def fit_trajectory(estimates: list[tuple[float, float]],
                   degree: int = 1) -> OmegaTrajectory:
    """Ordinary least-squares polynomial through (t_mid, omega) estimates."""
    if len(estimates) < degree + 1:
        raise FreqEstError(
            f"need at least {degree + 1} estimates for degree {degree}")
    t = np.array([e[0] for e in estimates])
    om = np.array([e[1] for e in estimates])
    design = np.vander(t, degree + 1, increasing=True)
    if np.linalg.matrix_rank(design) < degree + 1:
        raise FreqEstError("rank-deficient design matrix (duplicate times?)")
    coeffs, *_ = np.linalg.lstsq(design, om, rcond=None)
    resid = om - design @ coeffs
    rms = float(np.sqrt(np.mean(resid ** 2))) if len(resid) else 0.0
    return OmegaTrajectory([(float(t.min()), float(t.max()), coeffs)], rms)


def fit_piecewise_trajectory(estimates: list[tuple[float, float]],
                             degree: int = 1,
                             window: int = DEFAULT_WINDOW_GROUPS,
                             span: tuple[float, float] | None = None) -> OmegaTrajectory:
    """Refit every `window` group estimates; segments abut in time.

    span extends the first and last segments so the trajectory covers a
    whole click stream (group midpoints never reach the stream edges).
    """
    if len(estimates) < degree + 1:
        raise FreqEstError("not enough group estimates for a fit")
    traj = OmegaTrajectory()
    residuals = []
    for lo in range(0, len(estimates), window):
        chunk = estimates[lo:lo + window]
        if len(chunk) < degree + 1:
            chunk = estimates[max(0, len(estimates) - (degree + 1)):]
        piece = fit_trajectory(chunk, degree)
        t_lo, t_hi, coeffs = piece.segments[0]
        if traj.segments:
            t_lo = traj.segments[-1][1]  # abut with the previous segment
        traj.segments.append((t_lo, t_hi, coeffs))
        residuals.append(piece.fit_residual)
    if span is not None:
        lo0, hi0, c0 = traj.segments[0]
        traj.segments[0] = (min(lo0, span[0]), hi0, c0)
        lo1, hi1, c1 = traj.segments[-1]
        traj.segments[-1] = (lo1, max(hi1, span[1]), c1)
    traj.fit_residual = float(np.mean(residuals))
    return traj


def accumulated_phase(traj: OmegaTrajectory, t_i: float, t_j: float) -> float:
    """Integral of the fitted frequency difference between two times."""
    return traj.integral(t_i, t_j)


def prediction_error_rate(traj: OmegaTrajectory,
                          clicks: ReferenceClicks) -> float:
    """Fraction of consecutive click pairs whose same/different-detector
    outcome disagrees with the trajectory's prediction.

    The predictor picks same-detector when cos of the accumulated phase is
    nonnegative; coherent-state statistics leave a 25% floor even for a
    perfect trajectory.
    """
    t = np.asarray(clicks.time_s)
    det = np.asarray(clicks.detector)
    if len(t) < 2:
        return 0.0
    lo = min(seg[0] for seg in traj.segments)
    hi = max(seg[1] for seg in traj.segments)
    if t[0] < lo - 1e-12 or t[-1] > hi + 1e-12:
        raise FreqEstError("trajectory does not cover the click stream")
    errors = 0
    total = 0
    phases = np.array([traj.integral(float(t[k]), float(t[k + 1]))
                       for k in range(len(t) - 1)])
    predict_same = np.cos(phases) >= 0.0
    actual_same = det[1:] == det[:-1]
    errors = int(np.sum(predict_same != actual_same))
    total = len(phases)
    return errors / total
