"""Domain types, configuration validation and shared elementary math.

Everything downstream (simulation, pairing, decoy estimation, key rate)
builds on the types defined here. All functions are pure and safe to call
concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable


class ConfigError(ValueError):
    """Raised when a protocol configuration violates an invariant."""


class Intensity(IntEnum):
    """Per-round intensity choice. Real values live in ProtocolConfig."""

    VACUUM = 0
    DECOY = 1
    SIGNAL = 2


# Canonical pair-setting order used by count tables and the decoy LPs:
# both-signal, both-decoy, mixed, then one-side-vacuum, then vacuum-vacuum.
SETTING_ORDER: tuple[tuple[str, str], ...] = (
    ("mu", "mu"), ("nu", "nu"), ("mu", "nu"), ("nu", "mu"),
    ("mu", "0"), ("0", "mu"), ("nu", "0"), ("0", "nu"), ("0", "0"),
)

Z_SET_LABELS = {"0": "0", "nu": "nu", "mu": "mu"}
X_SET_LABELS = {"0": "0", "nu": "2nu", "mu": "2mu"}


@dataclass(frozen=True)
class TimingConfig:
    """Pulse timing: chop rate plus the cycle layout (reference / recovery /
    key-generation regions)."""

    system_rate_hz: float = 625e6
    cycle_us: float = 100.0
    ref_us: float = 25.76
    recovery_us: float = 3.07
    qkd_duty: float = 0.7117

    @property
    def tau_s(self) -> float:
        """Interval between adjacent pulses."""
        return 1.0 / self.system_rate_hz

    @property
    def qkd_pulses_per_cycle(self) -> int:
        return int(self.qkd_duty * self.cycle_us * 1e-6 * self.system_rate_hz)

    @property
    def cycle_s(self) -> float:
        return self.cycle_us * 1e-6

    @property
    def qkd_region_start_s(self) -> float:
        """Offset of the key-generation region within a cycle."""
        return (self.ref_us + self.recovery_us) * 1e-6

    def validate(self) -> list[str]:
        errors = []
        if self.system_rate_hz <= 0:
            errors.append("system_rate_hz must be positive")
        for name in ("cycle_us", "ref_us", "recovery_us"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if not 0 < self.qkd_duty <= 1:
            errors.append("qkd_duty must be in (0, 1]")
        used = self.ref_us + self.recovery_us + self.qkd_duty * self.cycle_us
        if used > 1.01 * self.cycle_us:
            errors.append("reference + recovery + QKD regions exceed the cycle")
        return errors


@dataclass(frozen=True)
class ChannelModel:
    """Optical channel and detector parameters.

    eta_a / eta_b are the sender-to-measurement transmittances, eta_det the
    detector efficiency.  The relative optical phase between the two senders
    evolves as a random walk with variance rate phase_drift_rate plus a
    deterministic laser frequency difference described by delta_omega_coeffs
    (polynomial in time, rad/s).  sigma_theta_residual models the leftover
    phase-estimation error applied when evaluating phase-encoded pairs; it is
    the calibration knob for the phase-basis error rate.
    """

    eta_a: float
    eta_b: float
    eta_det: float = 0.72
    dark_rate_hz: float = 36.5
    phase_drift_rate: float = 100.0
    delta_omega_coeffs: tuple[float, ...] = (0.0,)
    sigma_theta_residual: float = 0.0
    ref_click_prob: float = 0.3

    def validate(self) -> list[str]:
        errors = []
        for name in ("eta_a", "eta_b", "eta_det"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                errors.append(f"{name} must be in (0, 1], got {v}")
        for name in ("dark_rate_hz", "phase_drift_rate", "sigma_theta_residual"):
            if getattr(self, name) < 0:
                errors.append(f"{name} must be nonnegative")
        if not 0 <= self.ref_click_prob <= 1:
            errors.append("ref_click_prob must be in [0, 1]")
        return errors

    def delta_omega(self, t: float) -> float:
        """Laser frequency difference at time t (rad/s)."""
        return sum(c * t ** k for k, c in enumerate(self.delta_omega_coeffs))

    def delta_omega_integral(self, t: float) -> float:
        """Accumulated laser phase difference from 0 to t (rad)."""
        return sum(c * t ** (k + 1) / (k + 1)
                   for k, c in enumerate(self.delta_omega_coeffs))


@dataclass(frozen=True)
class ProtocolConfig:
    """Full protocol parameter set for one scenario."""

    mu_a: float
    nu_a: float
    mu_b: float
    nu_b: float
    p_mu_a: float
    p_nu_a: float
    p_mu_b: float
    p_nu_b: float
    phase_count_D: int
    l_max: int
    n_rounds: int
    f_ec: float
    epsilon: float
    channel: ChannelModel
    timing: TimingConfig = field(default_factory=TimingConfig)

    @property
    def p_vac_a(self) -> float:
        return 1.0 - self.p_mu_a - self.p_nu_a

    @property
    def p_vac_b(self) -> float:
        return 1.0 - self.p_mu_b - self.p_nu_b

    def intensity_values(self, side: str) -> tuple[float, float, float]:
        """(vacuum, decoy, signal) intensity values for one side."""
        if side == "a":
            return (0.0, self.nu_a, self.mu_a)
        if side == "b":
            return (0.0, self.nu_b, self.mu_b)
        raise ValueError(f"side must be 'a' or 'b', got {side!r}")

    def intensity_probs(self, side: str) -> tuple[float, float, float]:
        if side == "a":
            return (self.p_vac_a, self.p_nu_a, self.p_mu_a)
        if side == "b":
            return (self.p_vac_b, self.p_nu_b, self.p_mu_b)
        raise ValueError(f"side must be 'a' or 'b', got {side!r}")

    @property
    def elapsed_s(self) -> float:
        """Wall-clock session time implied by the pulse count and duty cycle."""
        return self.n_rounds / (self.timing.system_rate_hz * self.timing.qkd_duty)


def validate_config(cfg: ProtocolConfig) -> list[str]:
    """Return a list of human-readable invariant violations (empty if ok)."""
    errors: list[str] = []
    for side in ("a", "b"):
        mu = getattr(cfg, f"mu_{side}")
        nu = getattr(cfg, f"nu_{side}")
        p_mu = getattr(cfg, f"p_mu_{side}")
        p_nu = getattr(cfg, f"p_nu_{side}")
        if not 0 <= nu < mu:
            errors.append(f"side {side}: nu < mu violated (nu={nu}, mu={mu})")
        if p_mu < 0 or p_nu < 0:
            errors.append(f"side {side}: negative intensity probability")
        if p_mu + p_nu > 1:
            errors.append(f"side {side}: probabilities exceed 1 "
                          f"(p_mu={p_mu}, p_nu={p_nu})")
    if cfg.phase_count_D < 2 or cfg.phase_count_D % 2 != 0:
        errors.append(f"phase_count_D must be even and >= 2, got {cfg.phase_count_D}")
    if cfg.l_max < 1:
        errors.append(f"l_max must be >= 1, got {cfg.l_max}")
    if cfg.n_rounds < 1:
        errors.append(f"n_rounds must be >= 1, got {cfg.n_rounds}")
    if cfg.f_ec < 1:
        errors.append(f"f_ec must be >= 1, got {cfg.f_ec}")
    if not 0 < cfg.epsilon < 1:
        errors.append(f"epsilon must be in (0, 1), got {cfg.epsilon}")
    errors.extend(cfg.channel.validate())
    errors.extend(cfg.timing.validate())
    return errors


def require_valid(cfg: ProtocolConfig) -> None:
    errors = validate_config(cfg)
    if errors:
        raise ConfigError("; ".join(errors))


class CountTable:
    """Counts M and error counts EM per (basis, pair intensity setting).

    Settings are keyed by (basis, set_a, set_b) with set values in
    {"0", "nu", "mu"} for the key basis and {"0", "2nu", "2mu"} for the
    phase basis.  Counts may be non-integral (expected-value mode).
    """

    def __init__(self) -> None:
        self._cells: dict[tuple[str, str, str], list[float]] = {}
        for basis, labels in (("Z", Z_SET_LABELS), ("X", X_SET_LABELS)):
            for a, b in SETTING_ORDER:
                self._cells[(basis, labels[a], labels[b])] = [0.0, 0.0]

    @staticmethod
    def setting_labels(basis: str) -> list[tuple[str, str]]:
        labels = Z_SET_LABELS if basis == "Z" else X_SET_LABELS
        return [(labels[a], labels[b]) for a, b in SETTING_ORDER]

    def add(self, basis: str, set_a: str, set_b: str,
            m: float = 0.0, em: float = 0.0) -> None:
        cell = self._cells[(basis, set_a, set_b)]
        cell[0] += m
        cell[1] += em

    def get(self, basis: str, set_a: str, set_b: str) -> tuple[float, float]:
        m, em = self._cells[(basis, set_a, set_b)]
        return m, em

    def counts(self, basis: str) -> list[float]:
        """M values in canonical setting order."""
        return [self._cells[(basis, a, b)][0] for a, b in self.setting_labels(basis)]

    def error_counts(self, basis: str) -> list[float]:
        return [self._cells[(basis, a, b)][1] for a, b in self.setting_labels(basis)]

    def total(self, basis: str) -> float:
        return sum(self.counts(basis))

    def merge(self, other: "CountTable") -> "CountTable":
        for key, (m, em) in other._cells.items():
            cell = self._cells[key]
            cell[0] += m
            cell[1] += em
        return self

    def validate(self) -> list[str]:
        errors = []
        for (basis, a, b), (m, em) in self._cells.items():
            if m < 0 or em < 0:
                errors.append(f"{basis}({a},{b}): negative count")
            if em > m:
                errors.append(f"{basis}({a},{b}): EM={em} exceeds M={m}")
        return errors

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CountTable):
            return NotImplemented
        return self._cells == other._cells

    def __repr__(self) -> str:
        nz = sum(1 for v in self._cells.values() if v[0] > 0)
        return f"CountTable({nz} non-empty cells)"


def binary_entropy(x: float) -> float:
    """Binary entropy h(x) = -x log2 x - (1-x) log2 (1-x), h(0) = h(1) = 0."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary_entropy needs x in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


def poisson_pmf(k: int, lam: float) -> float:
    """Poisson probability mass, computed in log space for stability."""
    if lam < 0:
        raise ValueError(f"poisson_pmf needs lambda >= 0, got {lam}")
    if k < 0:
        return 0.0
    if lam == 0.0:
        return 1.0 if k == 0 else 0.0
    return math.exp(k * math.log(lam) - lam - math.lgamma(k + 1))


def poisson_tail(k_cut: int, lam: float) -> float:
    """P(K > k_cut) for K ~ Poisson(lam)."""
    return max(0.0, 1.0 - sum(poisson_pmf(k, lam) for k in range(k_cut + 1)))


def round_times(indices, timing: TimingConfig):
    """Map QKD-region round indices to session times (cycle-aware).

    Accepts scalars or numpy arrays; the reference and recovery regions at
    the start of each cycle shift every round of that cycle.
    """
    rpc = timing.qkd_pulses_per_cycle
    cyc = indices // rpc
    return (cyc * timing.cycle_s + timing.qkd_region_start_s
            + (indices - cyc * rpc) * timing.tau_s)
