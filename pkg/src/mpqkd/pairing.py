"""Click pairing, basis sifting, key mapping and count tallying.

The pairing scan walks the clicked rounds left to right: the first click
becomes the front pulse, the next one the rear; if their index distance is
below the pairing cap they form a pair and the scan restarts, otherwise the
front is dropped and the rear promoted.  Basis labels and two-party sifting
follow the announced-intensity tables of the protocol; phase-basis pairs are
kept only if the announced phase offsets fall inside the window around the
accumulated channel/laser phase.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .core import (CountTable, ProtocolConfig, X_SET_LABELS, Z_SET_LABELS,
                   round_times)
from .sim import OUTCOME_L, OUTCOME_R, RoundBlock, pair_phase_noise


class SideLabel(IntEnum):
    ZERO = 0
    Z = 1
    X = 2
    DISCARD = 3


class PairBasis(IntEnum):
    ZERO_PAIR = 0
    Z_PAIR = 1
    X_PAIR = 2
    DISCARD = 3


# Per-side label from the two rounds' intensity codes (vacuum/decoy/signal).
_SIDE_TABLE = np.array([
    [SideLabel.ZERO, SideLabel.Z, SideLabel.Z],
    [SideLabel.Z, SideLabel.X, SideLabel.DISCARD],
    [SideLabel.Z, SideLabel.DISCARD, SideLabel.X],
], dtype=np.uint8)

# Two-party basis from the per-side labels.
_BASIS_TABLE = np.array([
    [PairBasis.ZERO_PAIR, PairBasis.Z_PAIR, PairBasis.X_PAIR, PairBasis.DISCARD],
    [PairBasis.Z_PAIR, PairBasis.Z_PAIR, PairBasis.DISCARD, PairBasis.DISCARD],
    [PairBasis.X_PAIR, PairBasis.DISCARD, PairBasis.X_PAIR, PairBasis.DISCARD],
    [PairBasis.DISCARD, PairBasis.DISCARD, PairBasis.DISCARD, PairBasis.DISCARD],
], dtype=np.uint8)


def side_label(int_i: int, int_j: int) -> SideLabel:
    """Label one party's round pair by its two intensity choices."""
    return SideLabel(_SIDE_TABLE[int_i, int_j])


def pair_basis(label_a: SideLabel, label_b: SideLabel) -> PairBasis:
    """Two-party basis from the two announced side labels."""
    return PairBasis(_BASIS_TABLE[label_a, label_b])


def pair_clicks(clicked_indices, l_max: int) -> np.ndarray:
    """Scan clicked round indices into pairs; returns an (n, 2) array.

    Front/rear scan with strict distance cap: rear - front < l_max.
    """
    idx = np.asarray(clicked_indices, dtype=np.int64)
    if len(idx) > 1 and np.any(np.diff(idx) <= 0):
        raise ValueError("clicked indices must be strictly increasing")
    pairs = []
    front = -1
    for k in range(len(idx)):
        if front < 0:
            front = k
        elif idx[k] - idx[front] < l_max:
            pairs.append((idx[front], idx[k]))
            front = -1
        else:
            front = k
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def _pair_positions(idx: np.ndarray, l_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Like pair_clicks but returns positions into the click arrays."""
    fi, fj = [], []
    front = -1
    for k in range(len(idx)):
        if front < 0:
            front = k
        elif idx[k] - idx[front] < l_max:
            fi.append(front)
            fj.append(k)
            front = -1
        else:
            front = k
    return (np.array(fi, dtype=np.int64), np.array(fj, dtype=np.int64))


def map_z_key(int_i_a: int, int_j_a: int, int_i_b: int, int_j_b: int):
    """Key bits of a key-basis pair, or None for estimation-only settings.

    Alice's bit is 0 when her first round was vacuum; Bob uses the opposite
    convention, so anti-aligned vacuum rounds agree.
    """
    a_zero_i, a_zero_j = int_i_a == 0, int_j_a == 0
    b_zero_i, b_zero_j = int_i_b == 0, int_j_b == 0
    if (a_zero_i and a_zero_j) or (b_zero_i and b_zero_j):
        return None  # a zero total on either side: estimation only
    if a_zero_i == a_zero_j or b_zero_i == b_zero_j:
        raise ValueError("not a key-basis pair: both rounds nonzero on one side")
    chi_a = 0 if a_zero_i else 1
    chi_b = 1 if b_zero_i else 0
    return chi_a, chi_b


def map_x_key(phase_i_a: int, phase_j_a: int, phase_i_b: int, phase_j_b: int,
              delta_theta: float, d: int):
    """Phase-basis key mapping and sifting decision.

    Returns (chi_a, chi_b, theta_a, theta_b, retained, parity).  The phase
    offsets theta are the announced mod-pi relative phases; the pair is
    retained when theta_b - theta_a sits within pi/d of the accumulated
    phase delta_theta up to a multiple of pi, the multiple's parity feeding
    the error decision.  Window-boundary ties are retained.
    """
    half = d // 2
    dm_a = (phase_j_a - phase_i_a) % d
    dm_b = (phase_j_b - phase_i_b) % d
    chi_a = 1 if dm_a >= half else 0
    chi_b = 1 if dm_b >= half else 0
    theta_a = math.pi * (dm_a % half) / half
    theta_b = math.pi * (dm_b % half) / half
    v = theta_b - theta_a - delta_theta
    m = round(v / math.pi)
    w = v - m * math.pi
    retained = abs(w) <= math.pi / d + 1e-12
    return chi_a, chi_b, theta_a, theta_b, retained, int(m) % 2


def x_error_decision(det_i: int, det_j: int, chi_a: int, chi_b: int,
                     parity: int) -> bool:
    """Phase-basis error flag: the bit XOR must match the detector
    same/different indicator XOR the matched window parity."""
    d = 0 if det_i == det_j else 1
    return (chi_a ^ chi_b) != (d ^ parity)


@dataclass(frozen=True)
class PairRecord:
    i: int
    j: int
    basis: PairBasis
    set_a: str
    set_b: str
    chi_a: int | None = None
    chi_b: int | None = None
    theta_a: float | None = None
    theta_b: float | None = None
    retained: bool = True
    error: bool = False


_Z_NAMES = ("0", "nu", "mu")
_X_NAMES = ("0", "2nu", "2mu")


@dataclass
class ClickData:
    """Clicked-round columns extracted from simulation blocks."""

    index: np.ndarray
    intensity_a: np.ndarray
    intensity_b: np.ndarray
    phase_a: np.ndarray
    phase_b: np.ndarray
    detector: np.ndarray  # 0 = L, 1 = R

    @staticmethod
    def from_blocks(blocks) -> "ClickData":
        cols = ([], [], [], [], [], [])
        for blk in blocks:
            one = ((blk.outcome == OUTCOME_L) | (blk.outcome == OUTCOME_R))
            cols[0].append(blk.index[one])
            cols[1].append(blk.intensity_a[one])
            cols[2].append(blk.intensity_b[one])
            cols[3].append(blk.phase_a[one])
            cols[4].append(blk.phase_b[one])
            cols[5].append((blk.outcome[one] == OUTCOME_R).astype(np.uint8))
        if not cols[0]:
            empty = np.empty(0, dtype=np.int64)
            e8 = np.empty(0, dtype=np.uint8)
            return ClickData(empty, e8, e8, e8, e8, e8)
        return ClickData(*(np.concatenate(c) for c in cols))

    def __len__(self) -> int:
        return len(self.index)


def map_pairs(clicks: ClickData, cfg: ProtocolConfig, seed: int = 0,
              delta_theta: np.ndarray | None = None):
    """Vectorized pairing + key mapping over a click stream.

    delta_theta overrides the per-pair accumulated-phase estimates (used
    when an external frequency-estimation trajectory supplies them);
    otherwise they derive from the configured laser-difference profile plus
    the residual-noise knob.

    Returns (pair fields dict, CountTable).
    """
    fi, fj = _pair_positions(clicks.index, cfg.l_max)
    n = len(fi)
    table = CountTable()
    if n == 0:
        return {"n_pairs": 0}, table

    ia_i, ia_j = clicks.intensity_a[fi], clicks.intensity_a[fj]
    ib_i, ib_j = clicks.intensity_b[fi], clicks.intensity_b[fj]
    la = _SIDE_TABLE[ia_i, ia_j]
    lb = _SIDE_TABLE[ib_i, ib_j]
    basis = _BASIS_TABLE[la, lb]

    # Per-side totals as intensity codes (valid wherever the label is not
    # DISCARD: the nonzero code for Z labels, the common code for X labels).
    tot_a = np.maximum(ia_i, ia_j)
    tot_b = np.maximum(ib_i, ib_j)

    # Accumulated phase between the paired rounds as the parties estimate it.
    if delta_theta is None:
        t_i = round_times(clicks.index[fi], cfg.timing)
        t_j = round_times(clicks.index[fj], cfg.timing)
        ch = cfg.channel
        laser = np.zeros(n)
        for k, c in enumerate(ch.delta_omega_coeffs):
            if c != 0.0:
                laser += c * (t_j ** (k + 1) - t_i ** (k + 1)) / (k + 1)
        delta_theta = laser + pair_phase_noise(cfg, seed, n)

    d = cfg.phase_count_D
    half = d // 2
    dm_a = (clicks.phase_a[fj].astype(np.int32) - clicks.phase_a[fi]) % d
    dm_b = (clicks.phase_b[fj].astype(np.int32) - clicks.phase_b[fi]) % d
    chi_a_x = (dm_a >= half).astype(np.uint8)
    chi_b_x = (dm_b >= half).astype(np.uint8)
    theta_a = (math.pi / half) * (dm_a % half)
    theta_b = (math.pi / half) * (dm_b % half)
    v = theta_b - theta_a - delta_theta
    m = np.round(v / math.pi)
    w = v - m * math.pi
    retained = np.abs(w) <= (math.pi / d) + 1e-12
    parity = (m.astype(np.int64) % 2).astype(np.uint8)
    diff_det = (clicks.detector[fi] != clicks.detector[fj]).astype(np.uint8)
    err_x = (chi_a_x ^ chi_b_x) != (diff_det ^ parity)
    # Pairs without a phase-sifting window (a vacuum side announces no
    # phase): the outcome correlation is uninformative, parity plays no role.
    err_x_flat = (chi_a_x ^ chi_b_x) != diff_det

    chi_a_z = (ia_i == 0).astype(np.uint8) ^ 1  # 0 iff first round vacuum
    chi_b_z = (ib_i == 0).astype(np.uint8)      # 1 iff first round vacuum
    err_z = chi_a_z != chi_b_z

    sel_z = basis == PairBasis.Z_PAIR
    sel_x = basis == PairBasis.X_PAIR
    sel_zero = basis == PairBasis.ZERO_PAIR
    for a_code in range(3):
        for b_code in range(3):
            cell = (tot_a == a_code) & (tot_b == b_code)
            key = a_code > 0 and b_code > 0
            mz = sel_z & cell
            cnt = int(mz.sum())
            if cnt:
                em = int((mz & err_z).sum()) if key else 0
                table.add("Z", _Z_NAMES[a_code], _Z_NAMES[b_code], cnt, em)
            mx = sel_x & cell
            if key:
                mm = mx & retained
                cnt = int(mm.sum())
                if cnt:
                    table.add("X", _X_NAMES[a_code], _X_NAMES[b_code],
                              cnt, int((mm & err_x).sum()))
            else:
                cnt = int(mx.sum())
                if cnt:
                    table.add("X", _X_NAMES[a_code], _X_NAMES[b_code],
                              cnt, int((mx & err_x_flat).sum()))
    n_zero = int(sel_zero.sum())
    if n_zero:
        table.add("Z", "0", "0", n_zero, 0)
        table.add("X", "0", "0", n_zero, int((sel_zero & err_x_flat).sum()))

    fields = {
        "n_pairs": n,
        "i": clicks.index[fi],
        "j": clicks.index[fj],
        "basis": basis,
        "tot_a": tot_a,
        "tot_b": tot_b,
        "retained": retained,
        "n_discard": int((basis == PairBasis.DISCARD).sum()),
        "n_x_sifted_away": int((sel_x & (tot_a > 0) & (tot_b > 0)
                                & ~retained).sum()),
    }
    return fields, table


def tally(pairs: list[PairRecord]) -> CountTable:
    """Accumulate a count table from individual pair records."""
    table = CountTable()
    for p in pairs:
        if p.basis == PairBasis.DISCARD:
            continue
        if p.basis == PairBasis.ZERO_PAIR:
            table.add("Z", "0", "0", 1, 0)
            table.add("X", "0", "0", 1, int(p.error))
            continue
        basis = "Z" if p.basis == PairBasis.Z_PAIR else "X"
        if basis == "X" and not p.retained:
            continue
        key = p.set_a not in ("0",) and p.set_b not in ("0",)
        em = int(p.error) if (key or basis == "X") else 0
        if basis == "Z" and not key:
            em = 0
        table.add(basis, p.set_a, p.set_b, 1, em)
    return table
