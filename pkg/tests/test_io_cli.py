import json
import math

import numpy as np
import pytest

from mpqkd.cli import fixture_path, main
from mpqkd.core import ConfigError, CountTable
from mpqkd.io import (IOFormatError, config_from_dict, config_to_dict,
                      counts_to_csv, load_config, load_counts, load_refclicks,
                      refclicks_to_csv, save_counts)
from mpqkd.sim import ReferenceClicks, simulate_reference_blocks


class TestConfigIO:
    def test_round_trip(self, sym_config, tmp_path):
        data = config_to_dict(sym_config)
        again = config_from_dict(data)
        assert again == sym_config

    def test_unknown_top_key_rejected(self, sym_config):
        data = config_to_dict(sym_config)
        data["mu_c"] = 0.1
        with pytest.raises(ConfigError, match="unknown config keys"):
            config_from_dict(data)

    def test_unknown_channel_key_rejected(self, sym_config):
        data = config_to_dict(sym_config)
        data["channel"]["eta_z"] = 0.5
        with pytest.raises(ConfigError, match="unknown channel keys"):
            config_from_dict(data)

    def test_missing_key_rejected(self, sym_config):
        data = config_to_dict(sym_config)
        del data["mu_a"]
        with pytest.raises(ConfigError, match="missing"):
            config_from_dict(data)

    def test_invalid_values_rejected(self, sym_config):
        data = config_to_dict(sym_config)
        data["nu_a"] = data["mu_a"]
        with pytest.raises(ConfigError, match="nu < mu"):
            config_from_dict(data)


class TestCountsIO:
    def test_round_trip(self, sym_counts, tmp_path):
        path = tmp_path / "counts.csv"
        save_counts(sym_counts, path)
        again = load_counts(path)
        assert again == sym_counts

    def test_missing_cells_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("basis,set_a,set_b,M,EM\nZ,mu,mu,1,0\n")
        with pytest.raises(IOFormatError, match="missing cells"):
            load_counts(path)

    def test_em_above_m_rejected(self, sym_counts, tmp_path):
        text = counts_to_csv(sym_counts).replace("Z,mu,mu,88377993,9020",
                                                 "Z,mu,mu,10,20")
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(IOFormatError, match="exceeds"):
            load_counts(path)

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n")
        with pytest.raises(IOFormatError, match="header"):
            load_counts(path)


class TestRefClicksIO:
    def test_round_trip(self, sym_config, tmp_path):
        ref = simulate_reference_blocks(sym_config, seed=1, n_cycles=2)
        path = tmp_path / "ref.csv"
        path.write_text(refclicks_to_csv(ref))
        again = load_refclicks(path)
        assert np.array_equal(again.time_s, ref.time_s)
        assert np.array_equal(again.detector, ref.detector)


def _write_small_config(tmp_path, n_rounds=2_000_000, **channel_overrides):
    cfg = json.loads(fixture_path("config_symmetric.json").read_text())
    cfg.pop("description", None)
    cfg["n_rounds"] = n_rounds
    cfg["channel"].update(channel_overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg))
    return path


class TestSimulateCommand:
    def test_zero_rounds_empty_table(self, tmp_path):
        cfg = _write_small_config(tmp_path)
        rc = main(["simulate", "--config", str(cfg), "--seed", "1",
                   "--rounds", "0", "--out", str(tmp_path / "out")])
        assert rc == 0
        table = load_counts(tmp_path / "out" / "counts.csv")
        assert table.total("Z") == 0 and table.total("X") == 0

    def test_same_seed_identical_bytes(self, tmp_path):
        cfg = _write_small_config(tmp_path)
        for name in ("a", "b"):
            rc = main(["simulate", "--config", str(cfg), "--seed", "7",
                       "--rounds", "1500000", "--out", str(tmp_path / name)])
            assert rc == 0
        assert ((tmp_path / "a" / "counts.csv").read_bytes()
                == (tmp_path / "b" / "counts.csv").read_bytes())

    def test_round_dump_schema(self, tmp_path):
        cfg = _write_small_config(tmp_path)
        rc = main(["simulate", "--config", str(cfg), "--seed", "2",
                   "--rounds", "5000", "--out", str(tmp_path / "out"),
                   "--dump-rounds"])
        assert rc == 0
        lines = (tmp_path / "out" / "rounds.csv").read_text().splitlines()
        assert lines[0] == "index,int_a,phase_a,int_b,phase_b,outcome"
        assert len(lines) == 5001
        outcomes = {ln.rsplit(",", 1)[1] for ln in lines[1:]}
        assert outcomes <= {"-", "L", "R", "B"}

    def test_manifest_embedded(self, tmp_path):
        cfg = _write_small_config(tmp_path)
        main(["simulate", "--config", str(cfg), "--seed", "3",
              "--rounds", "10000", "--out", str(tmp_path / "out")])
        manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert manifest["subcommand"] == "simulate"
        assert manifest["seed"] == 3
        assert manifest["tool"] == "mpqkd"

    def test_bad_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{\"mu_a\": 1}")
        rc = main(["simulate", "--config", str(path), "--out",
                   str(tmp_path / "out")])
        assert rc == 1

    def test_missing_config_is_io_error(self, tmp_path):
        rc = main(["simulate", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "out")])
        assert rc == 2


class TestPostprocessCommand:
    def test_fixture_to_report(self, tmp_path):
        rc = main(["postprocess", str(fixture_path("table4_symmetric.csv")),
                   "--config", str(fixture_path("config_symmetric.json")),
                   "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["key_length"] > 0
        assert report["manifest"]["subcommand"] == "postprocess"

    def test_keyrate_alias(self, tmp_path):
        rc = main(["keyrate", str(fixture_path("table4_symmetric.csv")),
                   "--config", str(fixture_path("config_symmetric.json")),
                   "--out", str(tmp_path)])
        assert rc == 0

    def test_all_zero_counts_zero_key(self, tmp_path):
        table = CountTable()  # every cell zero
        path = tmp_path / "counts.csv"
        save_counts(table, path)
        rc = main(["postprocess", str(path),
                   "--config", str(fixture_path("config_symmetric.json")),
                   "--out", str(tmp_path)])
        assert rc == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert report["key_length"] == 0.0
        assert report["degenerate"]  # no single-photon pairs at all

    def test_missing_cells_exit_code(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("basis,set_a,set_b,M,EM\nZ,mu,mu,10,0\n")
        rc = main(["postprocess", str(path),
                   "--config", str(fixture_path("config_symmetric.json")),
                   "--out", str(tmp_path)])
        assert rc == 2


class TestEstimateFreqCommand:
    def test_synthetic_linear_profile_recovered(self, tmp_path):
        # known constant frequency difference; the fitted intercept must
        # match within the fit's own residual scale
        f0 = 43_210.0
        cfg_path = _write_small_config(
            tmp_path, delta_omega_coeffs=[2 * math.pi * f0],
            phase_drift_rate=0.0, ref_click_prob=0.008)
        cfg = load_config(cfg_path)
        ref = simulate_reference_blocks(cfg, seed=5, n_cycles=60)
        clicks_path = tmp_path / "ref.csv"
        clicks_path.write_text(refclicks_to_csv(ref))
        rc = main(["estimate-freq", str(clicks_path), "--config",
                   str(cfg_path), "--out", str(tmp_path)])
        assert rc == 0
        payload = json.loads((tmp_path / "trajectory.json").read_text())
        seg = payload["segments"][0]
        resid = max(payload["fit_residual_rad_per_s"], 2 * math.pi * 5)
        assert abs(seg["coefficients"][0] - 2 * math.pi * f0) < 5 * resid
        assert payload["prediction_error_rate"] < 0.45

    def test_empty_file_exit_one(self, tmp_path):
        cfg_path = _write_small_config(tmp_path)
        path = tmp_path / "ref.csv"
        path.write_text("time_s,detector\n")
        rc = main(["estimate-freq", str(path), "--config", str(cfg_path),
                   "--out", str(tmp_path)])
        assert rc == 1


class TestReproduceCommand:
    def test_missing_fixture_exit_two(self, monkeypatch, tmp_path):
        import mpqkd.cli as cli
        monkeypatch.setattr(cli, "fixture_path",
                            lambda name: tmp_path / name)
        rc = main(["reproduce-paper", "--which", "symmetric"])
        assert rc == 2
