"""Configuration and data file formats.

config.json mirrors ProtocolConfig field names one-to-one and rejects
unknown keys (typos in scientific configs should fail loudly, not silently
default).  counts.csv transcribes one count-table cell per row.  All writes
go through a temp-file-then-rename so readers never observe partial files.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import asdict
from pathlib import Path
from typing import Any

import numpy as np

from .core import (ChannelModel, ConfigError, CountTable, ProtocolConfig,
                   TimingConfig, require_valid)
from .sim import OUTCOME_CHARS, ReferenceClicks

COUNTS_HEADER = ["basis", "set_a", "set_b", "M", "EM"]
ROUNDS_HEADER = ["index", "int_a", "phase_a", "int_b", "phase_b", "outcome"]
REFCLICKS_HEADER = ["time_s", "detector"]

_CHANNEL_KEYS = {"eta_a", "eta_b", "eta_det", "dark_rate_hz",
                 "phase_drift_rate", "delta_omega_coeffs",
                 "sigma_theta_residual", "ref_click_prob"}
_TIMING_KEYS = {"system_rate_hz", "cycle_us", "ref_us", "recovery_us",
                "qkd_duty"}
_TOP_KEYS = {"mu_a", "nu_a", "mu_b", "nu_b", "p_mu_a", "p_nu_a", "p_mu_b",
             "p_nu_b", "phase_count_D", "l_max", "n_rounds", "f_ec",
             "epsilon", "channel", "timing", "description"}


class IOFormatError(ValueError):
    pass


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _reject_unknown(given: dict, allowed: set[str], where: str) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def config_from_dict(data: dict) -> ProtocolConfig:
    _reject_unknown(data, _TOP_KEYS, "config")
    missing = (_TOP_KEYS - {"description", "timing"}) - set(data)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    ch = dict(data["channel"])
    _reject_unknown(ch, _CHANNEL_KEYS, "channel")
    if "delta_omega_coeffs" in ch:
        ch["delta_omega_coeffs"] = tuple(float(c) for c in ch["delta_omega_coeffs"])
    channel = ChannelModel(**ch)
    timing = TimingConfig()
    if "timing" in data:
        tm = dict(data["timing"])
        _reject_unknown(tm, _TIMING_KEYS, "timing")
        timing = TimingConfig(**tm)
    cfg = ProtocolConfig(
        mu_a=float(data["mu_a"]), nu_a=float(data["nu_a"]),
        mu_b=float(data["mu_b"]), nu_b=float(data["nu_b"]),
        p_mu_a=float(data["p_mu_a"]), p_nu_a=float(data["p_nu_a"]),
        p_mu_b=float(data["p_mu_b"]), p_nu_b=float(data["p_nu_b"]),
        phase_count_D=int(data["phase_count_D"]), l_max=int(data["l_max"]),
        n_rounds=int(float(data["n_rounds"])), f_ec=float(data["f_ec"]),
        epsilon=float(data["epsilon"]), channel=channel, timing=timing)
    require_valid(cfg)
    return cfg


def load_config(path: str | Path) -> ProtocolConfig:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: ProtocolConfig) -> dict:
    out = {k: getattr(cfg, k) for k in
           ("mu_a", "nu_a", "mu_b", "nu_b", "p_mu_a", "p_nu_a", "p_mu_b",
            "p_nu_b", "phase_count_D", "l_max", "n_rounds", "f_ec", "epsilon")}
    out["channel"] = asdict(cfg.channel)
    out["channel"]["delta_omega_coeffs"] = list(cfg.channel.delta_omega_coeffs)
    out["timing"] = asdict(cfg.timing)
    return out


def counts_to_csv(table: CountTable) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COUNTS_HEADER)
    for basis in ("Z", "X"):
        for set_a, set_b in CountTable.setting_labels(basis):
            m, em = table.get(basis, set_a, set_b)
            w.writerow([basis, set_a, set_b, _fmt_count(m), _fmt_count(em)])
    return buf.getvalue()


def _fmt_count(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def save_counts(table: CountTable, path: str | Path) -> None:
    atomic_write_text(path, counts_to_csv(table))


def load_counts(path: str | Path) -> CountTable:
    table = CountTable()
    seen = set()
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != COUNTS_HEADER:
            raise IOFormatError(
                f"{path}: expected header {','.join(COUNTS_HEADER)}")
        for row in reader:
            if not row:
                continue
            if len(row) != 5:
                raise IOFormatError(f"{path}: malformed row {row!r}")
            basis, set_a, set_b, m, em = row
            try:
                table.add(basis, set_a, set_b, float(m), float(em))
            except KeyError:
                raise IOFormatError(
                    f"{path}: unknown cell {basis}({set_a},{set_b})") from None
            seen.add((basis, set_a, set_b))
    expected = {(b, a, s) for b in ("Z", "X")
                for a, s in CountTable.setting_labels(b)}
    missing = expected - seen
    if missing:
        raise IOFormatError(
            f"{path}: missing cells: {sorted(missing)}")
    bad = table.validate()
    if bad:
        raise IOFormatError(f"{path}: {'; '.join(bad)}")
    return table


def rounds_to_csv(blocks) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ROUNDS_HEADER)
    for blk in blocks:
        for rec in blk.records():
            w.writerow([rec.index, rec.intensity_a, rec.phase_a,
                        rec.intensity_b, rec.phase_b,
                        OUTCOME_CHARS[rec.outcome]])
    return buf.getvalue()


def refclicks_to_csv(clicks: ReferenceClicks) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REFCLICKS_HEADER)
    for t, d in zip(clicks.time_s, clicks.detector):
        w.writerow([repr(float(t)), "L" if d == 0 else "R"])
    return buf.getvalue()


def load_refclicks(path: str | Path) -> ReferenceClicks:
    times = []
    dets = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != REFCLICKS_HEADER:
            raise IOFormatError(
                f"{path}: expected header {','.join(REFCLICKS_HEADER)}")
        for row in reader:
            if not row:
                continue
            times.append(float(row[0]))
            d = row[1].strip()
            if d not in ("L", "R"):
                raise IOFormatError(f"{path}: detector must be L or R, got {d!r}")
            dets.append(0 if d == "L" else 1)
    return ReferenceClicks(np.array(times), np.array(dets, dtype=np.uint8))


def report_to_json(report, manifest: dict) -> str:
    from .keyrate import KeyRateReport  # local import to avoid a cycle
    assert isinstance(report, KeyRateReport)
    payload: dict[str, Any] = {
        "m11_z_lower": report.m11_z_lower,
        "m11_per_setting": {f"{a},{b}": v
                            for (a, b), v in report.m11_per_setting.items()},
        "e_ph_upper": report.e_ph_upper,
        "key_settings": {f"{a},{b}": v
                         for (a, b), v in report.key_settings.items()},
        "key_length": report.key_length,
        "r_per_pair": report.r_per_pair,
        "r_per_second": report.r_per_second,
        "elapsed_s": report.elapsed_s,
        "clamped": report.clamped,
        "degenerate": report.degenerate,
        "manifest": manifest,
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
