import math

import numpy as np
import pytest

from mpqkd.core import ChannelModel, ProtocolConfig
from mpqkd.pairing import ClickData
from mpqkd.sim import (OUTCOME_BOTH, OUTCOME_NONE, click_probabilities,
                       gate_dark_probability, simulate_reference_blocks,
                       simulate_rounds)


def _cfg(**channel_overrides):
    ch = dict(eta_a=7.549003e-3, eta_b=7.859236e-3, eta_det=0.72,
              dark_rate_hz=36.5, phase_drift_rate=100.0,
              delta_omega_coeffs=(18849.5559,), sigma_theta_residual=1.0,
              ref_click_prob=0.3)
    ch.update(channel_overrides)
    return ProtocolConfig(
        mu_a=0.3609, nu_a=0.0360, mu_b=0.3337, nu_b=0.0343,
        p_mu_a=0.25, p_nu_a=0.25, p_mu_b=0.25, p_nu_b=0.25,
        phase_count_D=16, l_max=1000, n_rounds=2 * 10 ** 12,
        f_ec=1.06, epsilon=1e-10, channel=ChannelModel(**ch))


def _collect(cfg, seed, n):
    blocks = list(simulate_rounds(cfg, seed, n))
    return blocks


class TestClickProbabilities:
    def test_vacuum_gives_dark_only(self):
        ch = ChannelModel(eta_a=0.1, eta_b=0.1)
        p_l, p_r = click_probabilities(0.0, 0.0, 1.23, ch, 8.2e-8)
        assert p_l == pytest.approx(8.2e-8, rel=1e-6)
        assert p_r == pytest.approx(8.2e-8, rel=1e-6)

    def test_full_destructive_interference(self):
        ch = ChannelModel(eta_a=0.1, eta_b=0.1, eta_det=0.72)
        x = 0.004
        p_l, p_r = click_probabilities(x, x, math.pi, ch, 0.0)
        assert p_l == pytest.approx(0.0, abs=1e-12)
        assert p_r == pytest.approx(1.0 - math.exp(-0.72 * 2 * x), rel=1e-9)

    def test_value_against_direct_formula(self):
        # mpmath oracle: Ia = Ib = 1e-3, dphi = 0, eta_det = 0.72,
        # gd = 8.2e-8 -> pL = 1.43904558e-3, pR = 8.2e-8
        ch = ChannelModel(eta_a=0.1, eta_b=0.1, eta_det=0.72)
        p_l, p_r = click_probabilities(1e-3, 1e-3, 0.0, ch, 8.2e-8)
        assert p_l == pytest.approx(1.4390455794898694e-3, rel=1e-12)
        assert p_r == pytest.approx(8.2e-8, rel=1e-6)

    def test_negative_intensity_rejected(self):
        ch = ChannelModel(eta_a=0.1, eta_b=0.1)
        with pytest.raises(ValueError):
            click_probabilities(-1e-3, 0.0, 0.0, ch, 0.0)

    def test_visibility_sweep_traces_cosine(self):
        ch = ChannelModel(eta_a=0.1, eta_b=0.1, eta_det=0.72)
        gd = 1e-9
        phis = np.linspace(0, 2 * math.pi, 64, endpoint=False)
        p_l, _ = click_probabilities(1e-3, 1e-3, phis, ch, gd)
        assert p_l.max() == pytest.approx(
            1 - (1 - gd) * math.exp(-0.72 * 2e-3), rel=1e-9)
        # minimum bounded below by the dark floor, far below the maximum
        assert p_l.min() >= gd - 1e-15
        assert p_l.min() < 1e-2 * p_l.max()


class TestSimulateRounds:
    def test_deterministic(self):
        cfg = _cfg()
        a = _collect(cfg, seed=42, n=1_000_000)
        b = _collect(cfg, seed=42, n=1_000_000)
        for blk_a, blk_b in zip(a, b):
            assert np.array_equal(blk_a.outcome, blk_b.outcome)
            assert np.array_equal(blk_a.phase_a, blk_b.phase_a)
            assert np.array_equal(blk_a.intensity_b, blk_b.intensity_b)

    def test_all_dark_off_vacuum_never_clicks(self):
        cfg = _cfg(dark_rate_hz=0.0)
        cfg = ProtocolConfig(**{**cfg.__dict__,
                                "mu_a": 1e-12, "nu_a": 1e-13,
                                "mu_b": 1e-12, "nu_b": 1e-13})
        # intensities ~1e-12 make clicks astronomically unlikely
        for blk in simulate_rounds(cfg, seed=1, n=200_000):
            assert np.all(blk.outcome == OUTCOME_NONE)

    def test_vacuum_round_click_rate(self):
        cfg = _cfg()
        gd = gate_dark_probability(cfg)
        expected = 2 * gd * (1 - gd)  # exactly-one-detector dark rate
        n = 40_000_000
        ones = 0
        vacuum = 0
        for blk in simulate_rounds(cfg, seed=5, n=n):
            vac = (blk.intensity_a == 0) & (blk.intensity_b == 0)
            vacuum += int(vac.sum())
            one = ((blk.outcome == 1) | (blk.outcome == 2)) & vac
            ones += int(one.sum())
        rate = ones / vacuum
        sigma = math.sqrt(expected / vacuum)
        assert abs(rate - expected) < 3 * sigma + 1e-12

    def test_click_rate_monotone_in_eta(self):
        lo = _cfg(eta_a=5e-3)
        hi = _cfg(eta_a=9e-3)
        def rate(cfg):
            clicks = 0
            for blk in simulate_rounds(cfg, seed=8, n=10_000_000):
                clicks += int(((blk.outcome == 1) | (blk.outcome == 2)).sum())
            return clicks / 10_000_000
        r_lo, r_hi = rate(lo), rate(hi)
        sigma = math.sqrt(r_lo / 10_000_000)
        assert r_hi > r_lo - 3 * sigma

    def test_double_clicks_recorded_but_excluded_from_clickdata(self):
        cfg = _cfg(eta_a=0.9, eta_b=0.9)  # absurdly bright to force doubles
        bright = ProtocolConfig(**{**cfg.__dict__, "mu_a": 0.9, "mu_b": 0.9})
        blocks = list(simulate_rounds(bright, seed=2, n=100_000))
        doubles = sum(int((blk.outcome == OUTCOME_BOTH).sum()) for blk in blocks)
        assert doubles > 0
        clicks = ClickData.from_blocks(blocks)
        outcome_by_index = np.concatenate([blk.outcome for blk in blocks])
        assert np.all(outcome_by_index[clicks.index] != OUTCOME_BOTH)


class TestReferenceBlocks:
    def test_static_phase_all_one_detector(self):
        cfg = _cfg(phase_drift_rate=0.0, delta_omega_coeffs=(0.0,),
                   dark_rate_hz=0.0)
        ref = simulate_reference_blocks(cfg, seed=3, n_cycles=5)
        assert len(ref) > 1000
        assert np.all(ref.detector == ref.detector[0])

    def test_kilohertz_beat_visible_in_spectrum(self):
        # constant frequency difference of 1 kHz: the detector imbalance
        # oscillates at 1 kHz; locate the spectral peak with a plain DFT
        f0 = 1000.0
        cfg = _cfg(phase_drift_rate=0.0,
                   delta_omega_coeffs=(2 * math.pi * f0,),
                   dark_rate_hz=0.0)
        ref = simulate_reference_blocks(cfg, seed=4, n_cycles=400)
        # bin the +-1 detector signal on a regular grid
        t_max = ref.time_s[-1]
        bins = 4096
        grid = np.linspace(0.0, t_max, bins + 1)
        sig = np.zeros(bins)
        cnt = np.zeros(bins)
        which = np.clip(np.searchsorted(grid, ref.time_s) - 1, 0, bins - 1)
        np.add.at(sig, which, 1.0 - 2.0 * ref.detector)
        np.add.at(cnt, which, 1.0)
        sig = np.where(cnt > 0, sig / np.maximum(cnt, 1), 0.0)
        spectrum = np.abs(np.fft.rfft(sig - sig.mean()))
        freqs = np.fft.rfftfreq(bins, d=t_max / bins)
        peak = freqs[np.argmax(spectrum)]
        df = freqs[1] - freqs[0]
        assert abs(peak - f0) <= 2 * df

    def test_deterministic(self):
        cfg = _cfg()
        a = simulate_reference_blocks(cfg, seed=11, n_cycles=10)
        b = simulate_reference_blocks(cfg, seed=11, n_cycles=10)
        assert np.array_equal(a.time_s, b.time_s)
        assert np.array_equal(a.detector, b.detector)

    def test_times_strictly_increasing(self):
        ref = simulate_reference_blocks(_cfg(), seed=6, n_cycles=20)
        assert np.all(np.diff(ref.time_s) > 0)
