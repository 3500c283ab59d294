"""Final key length and rate assembly."""
from __future__ import annotations

from dataclasses import dataclass, field

from .core import CountTable, ProtocolConfig, binary_entropy
from .decoylp import DecoyEstimates

KEY_SETTINGS = (("mu", "mu"), ("nu", "nu"), ("mu", "nu"), ("nu", "mu"))


class KeyRateError(ValueError):
    pass


@dataclass
class KeyRateReport:
    m11_z_lower: float
    m11_per_setting: dict[tuple[str, str], float]
    e_ph_upper: float
    key_settings: dict[tuple[str, str], dict]
    key_length: float
    r_per_pair: float
    r_per_second: float
    elapsed_s: float
    clamped: bool = False
    degenerate: bool = False
    manifest: dict = field(default_factory=dict)


def key_length(estimates: DecoyEstimates, counts: CountTable,
               f_ec: float) -> tuple[float, bool]:
    """Extractable key length in bits (clamped at zero).

    The privacy term uses the key-basis single-photon lower bound and the
    phase-error upper bound; the error-correction term charges
    f_ec * M * h(QBER) over the four key settings only (zero-intensity
    settings carry no key bits).
    """
    correction = 0.0
    for (a, b) in KEY_SETTINGS:
        m, em = counts.get("Z", a, b)
        if m <= 0:
            continue  # empty cell: no raw key, no correction cost
        correction += f_ec * m * binary_entropy(em / m)
    k = estimates.m11_z_lower * (1.0 - binary_entropy(estimates.e_ph_upper))
    k -= correction
    if k < 0:
        return 0.0, True
    return k, False


def key_rates(k: float, cfg: ProtocolConfig) -> tuple[float, float]:
    """(bits per pulse pair, bits per second).

    The per-pair rate is normalized to the n_rounds/2 pulse-pair slots of
    the session; the per-second rate uses the duty-cycle time base.
    """
    if k < 0:
        raise KeyRateError(f"key length must be nonnegative, got {k}")
    slots = cfg.n_rounds / 2.0
    if slots <= 0:
        raise KeyRateError("no pulse pairs: n_rounds must be positive")
    elapsed = cfg.elapsed_s
    return k / slots, k / elapsed


def build_report(estimates: DecoyEstimates, counts: CountTable,
                 cfg: ProtocolConfig, manifest: dict | None = None) -> KeyRateReport:
    k, clamped = key_length(estimates, counts, cfg.f_ec)
    r_pair, r_sec = key_rates(k, cfg)
    key_cells = {}
    for (a, b) in KEY_SETTINGS:
        m, em = counts.get("Z", a, b)
        key_cells[(a, b)] = {"M": m, "EM": em, "qber": em / m if m > 0 else 0.0}
    return KeyRateReport(
        m11_z_lower=estimates.m11_z_lower,
        m11_per_setting=dict(estimates.m11_per_setting),
        e_ph_upper=estimates.e_ph_upper,
        key_settings=key_cells,
        key_length=k,
        r_per_pair=r_pair,
        r_per_second=r_sec,
        elapsed_s=cfg.elapsed_s,
        clamped=clamped,
        degenerate=estimates.degenerate,
        manifest=manifest or {},
    )


def format_report_table(report: KeyRateReport) -> str:
    """Aligned text table of the headline quantities."""
    rows = []
    for (a, b) in KEY_SETTINGS:
        rows.append((f"M11_({a},{b})_L", f"{report.m11_per_setting[(a, b)]:.0f}"))
    rows.append(("e_ph_11_U", f"{report.e_ph_upper:.4f}"))
    rows.append(("key_length", f"{report.key_length:.0f}"))
    rows.append(("R_per_pair", f"{report.r_per_pair:.3e}"))
    rows.append(("R_per_second", f"{report.r_per_second:.2f}"))
    rows.append(("elapsed_s", f"{report.elapsed_s:.1f}"))
    width = max(len(name) for name, _ in rows)
    lines = [f"{name:<{width}}  {value}" for name, value in rows]
    if report.clamped:
        lines.append("(key length clamped to zero)")
    return "\n".join(lines)
