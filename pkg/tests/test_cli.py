import json
import math

import pytest

from fsoqkd.cli import (
    CROSSOVER_HEADER,
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    SWEEP_HEADER,
    ConfigError,
    emit_config,
    main,
    parse_config,
)
from fsoqkd.decoy import DetectorModel, SourceModel, one_way_bounds, synthesize_observations

FAST_CONFIG = """
[run]
trials = 3
seed = 99
distances_m = 400, 1200
antennas = 2

[optics]
field_grid_points = 1024
"""


class TestParseConfig:
    def test_empty_document_gives_reference_defaults(self):
        cfg = parse_config("")
        sim = cfg.sim
        assert sim.wavelength == 1550e-9
        assert sim.waist == 35e-3
        assert sim.atmosphere.a_r == 0.20
        assert sim.atmosphere.delta == 0.43e-3
        assert sim.atmosphere.c_n_sq == 1e-15
        assert sim.source.mu_signal == 0.5
        assert sim.source.mu_decoy1 == 0.1
        assert sim.source.mu_decoy2 == 0.001
        assert sim.protocol.error_correction == 1.03
        assert sim.detector.background_yield == 1.6e-5
        assert sim.detector.background_error == 0.5
        assert sim.detector.misalignment_error == 0.015
        assert sim.pointing_jitter == 1e-6
        assert sim.detector.efficiency == 0.12
        assert sim.protocol.q_oneway == 0.5
        assert sim.protocol.q_twoway == 1.0

    def test_source_invariant_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[source]\nmu_decoy1 = 0.6\n")
        assert any("source" in p for p in exc.value.problems)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[run]\ntrails = 5\n")
        assert any("unknown key run.trails" in p for p in exc.value.problems)

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError):
            parse_config("[laser]\npower = 5\n")

    def test_all_problems_reported_at_once(self):
        doc = "[run]\ntrials = soon\nprotocol = sideways\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(doc)
        probs = exc.value.problems
        assert any("trials" in p for p in probs)

    def test_type_error_reported(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("[detector]\nefficiency = bright\n")
        assert any("efficiency" in p for p in exc.value.problems)

    def test_round_trip(self):
        cfg = parse_config("")
        text = emit_config(cfg)
        again = parse_config(text)
        assert again == cfg

    def test_round_trip_with_overrides(self):
        cfg = parse_config(FAST_CONFIG)
        assert cfg.sim.n_trials == 3
        assert cfg.sim.distances == (400.0, 1200.0)
        again = parse_config(emit_config(cfg))
        assert again == cfg


class TestGoldenHeaders:
    def test_sweep_header_frozen(self):
        assert SWEEP_HEADER == "z_m,protocol,skr_mean,skr_stderr,qber,n_trials,seed"

    def test_crossover_header_frozen(self):
        assert CROSSOVER_HEADER == (
            "n,eta_d,p_m,status,crossover_z_m,bracket_lo_m,bracket_hi_m,"
            "d_at_crossover,d_stderr,iterations,multiple_crossings,"
            "within_noise,n_trials,seed,error")


class TestSweepCommand:
    def test_row_count_and_header(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        out = tmp_path / "sweep.csv"
        rc = main(["sweep", "--config", str(cfgp), "--out", str(out), "--trials", "1"])
        assert rc == EXIT_OK
        lines = out.read_text().splitlines()
        data = [ln for ln in lines if not ln.startswith("#")]
        assert data[0] == SWEEP_HEADER
        assert len(data) == 1 + 4  # 2 distances x both protocols

    def test_byte_identical_rerun(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        assert main(["sweep", "--config", str(cfgp), "--out", str(out1)]) == EXIT_OK
        assert main(["sweep", "--config", str(cfgp), "--out", str(out2)]) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()

    def test_rerun_from_embedded_config(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        out1 = tmp_path / "a.csv"
        main(["sweep", "--config", str(cfgp), "--out", str(out1)])
        summary = json.loads((tmp_path / "a.summary.json").read_text())
        cfg2 = tmp_path / "embedded.ini"
        cfg2.write_text(summary["config"])
        out2 = tmp_path / "b.csv"
        main(["sweep", "--config", str(cfg2), "--out", str(out2)])
        assert out1.read_bytes() == out2.read_bytes()

    def test_seed_flag_overrides(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        main(["sweep", "--config", str(cfgp), "--out", str(out1)])
        main(["sweep", "--config", str(cfgp), "--out", str(out2), "--seed", "123"])
        assert out1.read_bytes() != out2.read_bytes()

    def test_summary_contains_config_and_seed(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        out = tmp_path / "s.csv"
        main(["sweep", "--config", str(cfgp), "--out", str(out)])
        summary = json.loads((tmp_path / "s.summary.json").read_text())
        assert summary["seed"] == 99
        assert "[run]" in summary["config"]
        assert summary["units"] == "bits_per_pulse"

    def test_config_error_exit_code(self, tmp_path):
        cfgp = tmp_path / "bad.ini"
        cfgp.write_text("[run]\ntrials = -4\n")
        out = tmp_path / "x.csv"
        rc = main(["sweep", "--config", str(cfgp), "--out", str(out)])
        assert rc == EXIT_CONFIG

    def test_io_error_exit_code(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        rc = main(["sweep", "--config", str(cfgp), "--out",
                   str(tmp_path / "nodir" / "x.csv")])
        assert rc == EXIT_IO

    def test_missing_config_file(self, tmp_path):
        rc = main(["sweep", "--config", str(tmp_path / "absent.ini"),
                   "--out", str(tmp_path / "x.csv")])
        assert rc == EXIT_IO

    def test_pulse_rate_scales_output(self, tmp_path):
        base = tmp_path / "base.ini"
        base.write_text(FAST_CONFIG)
        scaled = tmp_path / "scaled.ini"
        scaled.write_text(FAST_CONFIG.replace("[run]", "[run]\npulse_rate_hz = 1e6"))
        out_b = tmp_path / "b.csv"
        out_s = tmp_path / "s.csv"
        main(["sweep", "--config", str(base), "--out", str(out_b)])
        main(["sweep", "--config", str(scaled), "--out", str(out_s)])

        def first_rate(p):
            rows = [ln for ln in p.read_text().splitlines() if not ln.startswith("#")]
            return float(rows[1].split(",")[2])

        assert first_rate(out_s) == pytest.approx(1e6 * first_rate(out_b), rel=1e-12)


class TestCrossoverCommand:
    def test_single_cell_csv(self, tmp_path):
        cfgp = tmp_path / "run.ini"
        cfgp.write_text(FAST_CONFIG)
        out = tmp_path / "cross.csv"
        rc = main(["crossover", "--config", str(cfgp), "--out", str(out),
                   "--n-list", "2", "--eta-list", "0.12", "--pm-list", "0.95",
                   "--z-min", "300", "--z-max", "1500", "--tol-z", "300"])
        assert rc == EXIT_OK
        lines = [ln for ln in out.read_text().splitlines() if not ln.startswith("#")]
        assert lines[0] == CROSSOVER_HEADER
        assert len(lines) == 2
        assert lines[1].startswith("2,0.12,0.95,")


class TestBoundsCommand:
    def test_matches_library_call(self, tmp_path, capsys):
        src = SourceModel(0.5, 0.1, 0.001)
        det = DetectorModel()
        obs = synthesize_observations(src, det, 0.1)
        csvp = tmp_path / "obs.csv"
        csvp.write_text(
            "intensity,Q,E\n"
            f"0.5,{obs.q_signal!r},{obs.e_signal!r}\n"
            f"0.1,{obs.q_decoy1!r},{obs.e_decoy1!r}\n"
            f"0.001,{obs.q_decoy2!r},{obs.e_decoy2!r}\n")
        outp = tmp_path / "bounds.json"
        rc = main(["bounds", "--observations", str(csvp), "--out", str(outp)])
        assert rc == EXIT_OK
        doc = json.loads(outp.read_text())
        rec = doc["records"][0]
        direct = one_way_bounds(obs, src)
        assert rec["y1_lower"] == direct.y1_lower
        assert rec["e1_upper"] == direct.e1_upper

    def test_twoway_requires_transmissivity(self, tmp_path):
        src = SourceModel(0.5, 0.1, 0.001)
        obs = synthesize_observations(src, DetectorModel(), 0.05)
        csvp = tmp_path / "obs.csv"
        csvp.write_text(
            "intensity,Q,E\n"
            f"0.5,{obs.q_signal!r},{obs.e_signal!r}\n"
            f"0.1,{obs.q_decoy1!r},{obs.e_decoy1!r}\n"
            f"0.001,{obs.q_decoy2!r},{obs.e_decoy2!r}\n")
        rc = main(["bounds", "--observations", str(csvp), "--protocol", "twoway"])
        assert rc == EXIT_CONFIG
        rc = main(["bounds", "--observations", str(csvp), "--protocol", "twoway",
                   "--transmissivity", "0.05"])
        assert rc == EXIT_OK
