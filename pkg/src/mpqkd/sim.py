"""Seedable Monte Carlo generation of detection data.

Round-level key-generation data and strong-pulse reference clicks are
produced by a counter-based generator (Philox keyed by (seed, block index)),
so output is a pure function of (config, seed, n) no matter how many worker
threads consume the blocks.  The relative channel phase follows a random
walk that is kept exactly continuous across block boundaries by a Brownian
bridge construction: block-boundary increments come from a dedicated
stream, and in-block steps are bridged onto them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .core import ChannelModel, ProtocolConfig, require_valid, round_times

BLOCK_SIZE = 1 << 22
_JUMP_STREAM = np.uint64(1) << np.uint64(62)
_NOISE_STREAM = (np.uint64(1) << np.uint64(62)) + np.uint64(1)
_REF_STREAM = (np.uint64(1) << np.uint64(62)) + np.uint64(2)

OUTCOME_NONE = 0
OUTCOME_L = 1
OUTCOME_R = 2
OUTCOME_BOTH = 3
OUTCOME_CHARS = {OUTCOME_NONE: "-", OUTCOME_L: "L", OUTCOME_R: "R",
                 OUTCOME_BOTH: "B"}


@dataclass(frozen=True)
class RoundRecord:
    index: int
    intensity_a: int
    intensity_b: int
    phase_a: int
    phase_b: int
    outcome: int


@dataclass
class RoundBlock:
    """One contiguous block of simulated rounds (struct-of-arrays)."""

    index: np.ndarray      # int64, global round index
    intensity_a: np.ndarray  # uint8 Intensity codes
    intensity_b: np.ndarray
    phase_a: np.ndarray    # uint8 phase indices in [0, D)
    phase_b: np.ndarray
    outcome: np.ndarray    # uint8 outcome codes

    def __len__(self) -> int:
        return len(self.index)

    def records(self) -> Iterator[RoundRecord]:
        for k in range(len(self.index)):
            yield RoundRecord(int(self.index[k]), int(self.intensity_a[k]),
                              int(self.intensity_b[k]), int(self.phase_a[k]),
                              int(self.phase_b[k]), int(self.outcome[k]))


def _rng(seed: int, stream) -> np.random.Generator:
    key = np.zeros(2, dtype=np.uint64)
    key[0] = np.uint64(seed)
    key[1] = np.uint64(stream)
    return np.random.Generator(np.random.Philox(key=key))


def click_probabilities(i_a: float, i_b: float, delta_phi, ch: ChannelModel,
                        gate_dark: float):
    """Per-detector click probabilities for one interference round.

    i_a, i_b are the intensities arriving at the beamsplitter (channel loss
    already applied); the detector efficiency attenuates inside the
    exponential.  Accepts scalars or arrays for delta_phi.
    """
    if np.any(np.asarray(i_a) < 0) or np.any(np.asarray(i_b) < 0):
        raise ValueError("intensities must be nonnegative")
    mean = 0.5 * (i_a + i_b)
    cross = np.sqrt(i_a * i_b) * np.cos(delta_phi)
    p_l = 1.0 - (1.0 - gate_dark) * np.exp(-ch.eta_det * (mean + cross))
    p_r = 1.0 - (1.0 - gate_dark) * np.exp(-ch.eta_det * (mean - cross))
    return p_l, p_r


def gate_dark_probability(cfg: ProtocolConfig) -> float:
    return cfg.channel.dark_rate_hz / cfg.timing.system_rate_hz


def _block_time_steps(idx: np.ndarray, t: np.ndarray, prev_t: float) -> np.ndarray:
    dt = np.empty(len(idx))
    dt[0] = t[0] - prev_t if prev_t >= 0 else t[0]
    dt[1:] = np.diff(t)
    return dt


def simulate_rounds(cfg: ProtocolConfig, seed: int, n: int,
                    block_size: int = BLOCK_SIZE) -> Iterator[RoundBlock]:
    """Yield deterministic blocks of simulated rounds.

    Both parties draw intensities and phases per the configured
    probabilities; the total interference phase per round is the encoded
    phase difference plus the laser-difference integral plus the channel
    random walk.  Detectors click independently given the port intensities.
    """
    require_valid(cfg)
    ch = cfg.channel
    timing = cfg.timing
    gd = gate_dark_probability(cfg)
    d = cfg.phase_count_D
    vals_a = np.array(cfg.intensity_values("a"))
    vals_b = np.array(cfg.intensity_values("b"))
    cum_a = np.cumsum(cfg.intensity_probs("a"))
    cum_b = np.cumsum(cfg.intensity_probs("b"))
    # Guard against round-off in the last bin.
    cum_a[-1] = cum_b[-1] = 1.0

    n_blocks = (n + block_size - 1) // block_size
    jump_rng = _rng(seed, _JUMP_STREAM)
    two_pi_over_d = 2.0 * math.pi / d

    walk_start = 0.0
    prev_t = -1.0
    for b in range(n_blocks):
        lo = b * block_size
        hi = min(n, lo + block_size)
        nb = hi - lo
        idx = np.arange(lo, hi, dtype=np.int64)
        t = round_times(idx, timing)
        rng = _rng(seed, b)
        int_a = np.searchsorted(cum_a, rng.random(nb), side="left").astype(np.uint8)
        int_b = np.searchsorted(cum_b, rng.random(nb), side="left").astype(np.uint8)
        ph_a = rng.integers(0, d, nb, dtype=np.uint8)
        ph_b = rng.integers(0, d, nb, dtype=np.uint8)

        if ch.phase_drift_rate > 0:
            dt = _block_time_steps(idx, t, prev_t)
            steps = rng.standard_normal(nb) * np.sqrt(ch.phase_drift_rate * dt)
            s = np.cumsum(steps)
            span = dt.sum()
            jump = jump_rng.standard_normal() * math.sqrt(ch.phase_drift_rate * span)
            t_frac = np.cumsum(dt) / span
            walk = walk_start + s + t_frac * (jump - s[-1])
            walk_start += jump
        else:
            walk = np.zeros(nb)
        prev_t = float(t[-1])

        laser = np.zeros(nb)
        for k, c in enumerate(ch.delta_omega_coeffs):
            if c != 0.0:
                laser += c * t ** (k + 1) / (k + 1)

        delta_phi = (two_pi_over_d * (ph_a.astype(np.float64) - ph_b)
                     + laser + walk)
        p_l, p_r = click_probabilities(ch.eta_a * vals_a[int_a],
                                       ch.eta_b * vals_b[int_b],
                                       delta_phi, ch, gd)
        click_l = rng.random(nb) < p_l
        click_r = rng.random(nb) < p_r
        outcome = (click_l.astype(np.uint8) + 2 * click_r.astype(np.uint8))
        yield RoundBlock(idx, int_a, int_b, ph_a, ph_b, outcome)


@dataclass
class ReferenceClicks:
    """Strong-pulse reference clicks: times (s) and detectors (0=L, 1=R)."""

    time_s: np.ndarray
    detector: np.ndarray

    def __len__(self) -> int:
        return len(self.time_s)


def simulate_reference_blocks(cfg: ProtocolConfig, seed: int,
                              n_cycles: int) -> ReferenceClicks:
    """Exactly-one-click events from the reference region of each cycle.

    No phase encoding is applied to the strong pulses, so the detector
    split follows P(L) = (1 + cos(phase))/2 with the phase accumulating
    from the laser frequency difference and the channel random walk.
    """
    require_valid(cfg)
    ch = cfg.channel
    timing = cfg.timing
    per_cycle = int(timing.ref_us * 1e-6 * timing.system_rate_hz)
    rng = _rng(seed, _REF_STREAM)
    times = []
    dets = []
    walk = 0.0
    prev_t = 0.0
    for c in range(n_cycles):
        base = c * timing.cycle_s
        t = base + np.arange(per_cycle) * timing.tau_s
        detected = rng.random(per_cycle) < ch.ref_click_prob
        t = t[detected]
        if len(t) == 0:
            continue
        if ch.phase_drift_rate > 0:
            dt = np.empty(len(t))
            dt[0] = t[0] - prev_t
            dt[1:] = np.diff(t)
            steps = rng.standard_normal(len(t)) * np.sqrt(ch.phase_drift_rate * dt)
            w = walk + np.cumsum(steps)
            walk = float(w[-1])
        else:
            w = np.zeros(len(t))
        prev_t = float(t[-1])
        laser = np.zeros(len(t))
        for k, coef in enumerate(ch.delta_omega_coeffs):
            if coef != 0.0:
                laser += coef * t ** (k + 1) / (k + 1)
        theta = laser + w
        p_left = 0.5 * (1.0 + np.cos(theta))
        det = (rng.random(len(t)) >= p_left).astype(np.uint8)
        times.append(t)
        dets.append(det)
    if not times:
        return ReferenceClicks(np.empty(0), np.empty(0, dtype=np.uint8))
    return ReferenceClicks(np.concatenate(times), np.concatenate(dets))


def pair_phase_noise(cfg: ProtocolConfig, seed: int, n_pairs: int) -> np.ndarray:
    """Residual phase-estimation noise applied per pair at key mapping."""
    sigma = cfg.channel.sigma_theta_residual
    if sigma == 0.0 or n_pairs == 0:
        return np.zeros(n_pairs)
    return sigma * _rng(seed, _NOISE_STREAM).standard_normal(n_pairs)
