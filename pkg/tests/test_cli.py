import os

import pytest

from recosim import presets
from recosim.cli import main
from recosim.scenario import load_spec, spec_to_text


@pytest.fixture()
def tiny_cfg(tmp_path):
    spec = presets.with_overrides(
        presets.validation(), channels=2, items_per_channel=10,
        nodes_per_community=8, duration=20_000.0)
    path = tmp_path / "tiny.cfg"
    path.write_text(spec_to_text(spec))
    return str(path)


class TestGenScenario:
    def test_preset_to_file(self, tmp_path, capsys):
        out = tmp_path / "t3.cfg"
        assert main(["gen-scenario", "table3", "-o", str(out)]) == 0
        spec = load_spec(str(out))
        assert spec.communities == 3
        assert "hash" in capsys.readouterr().out

    def test_file_passthrough_is_canonical(self, tmp_path, tiny_cfg):
        out = tmp_path / "copy.cfg"
        assert main(["gen-scenario", tiny_cfg, "-o", str(out)]) == 0
        assert load_spec(str(out)) == load_spec(tiny_cfg)

    def test_missing_input_is_runtime_error(self, tmp_path):
        assert main(["gen-scenario", "no-such-file.cfg",
                     "-o", str(tmp_path / "x.cfg")]) == 2


class TestUsageErrors:
    def test_unknown_flag(self):
        assert main(["run-des", "x.cfg", "--frobnicate"]) == 1

    def test_missing_subcommand(self):
        assert main([]) == 1

    def test_unknown_subcommand(self):
        assert main(["launch-rockets"]) == 1

    def test_help_exits_zero(self):
        assert main(["--help"]) == 0


class TestRuns:
    def test_hybrid_writes_outputs(self, tmp_path, tiny_cfg, capsys):
        out = tmp_path / "out"
        code = main(["run-hybrid", tiny_cfg, "--replicas", "2",
                     "--out-dir", str(out)])
        assert code == 0
        assert (out / "hitrate.csv").exists()
        assert (out / "manifest.txt").exists()
        assert "final hit rate" in capsys.readouterr().out

    def test_des_deterministic_across_runs_and_jobs(self, tmp_path, tiny_cfg):
        blobs = []
        for jobs, name in (("1", "a"), ("1", "b"), ("2", "c")):
            out = tmp_path / name
            assert main(["run-des", tiny_cfg, "--replicas", "2",
                         "--jobs", jobs, "--out-dir", str(out)]) == 0
            blobs.append((out / "hitrate.csv").read_bytes())
        assert blobs[0] == blobs[1] == blobs[2]

    def test_analytic_writes_trace(self, tmp_path):
        cfg = tmp_path / "fig4.cfg"
        cfg.write_text(spec_to_text(presets.single_community_model_validation()))
        out = tmp_path / "out"
        assert main(["run-analytic", str(cfg), "--out-dir", str(out)]) == 0
        assert (out / "model_trace.csv").exists()
        assert (out / "replication.csv").exists()

    def test_invalid_scenario_exits_two(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[recognition]\noc_capacity = 0\n")
        assert main(["run-hybrid", str(bad)]) == 2

    def test_no_channel_recognition_flag(self, tmp_path, tiny_cfg):
        out = tmp_path / "out"
        assert main(["run-hybrid", tiny_cfg, "--no-channel-recognition",
                     "--out-dir", str(out)]) == 0


class TestCompare:
    def test_compare_prints_gaps(self, tmp_path, tiny_cfg, capsys):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        main(["run-hybrid", tiny_cfg, "--out-dir", str(out_a)])
        main(["run-des", tiny_cfg, "--out-dir", str(out_b)])
        capsys.readouterr()
        code = main(["compare", str(out_a / "hitrate.csv"),
                     str(out_b / "hitrate.csv")])
        assert code == 0
        text = capsys.readouterr().out
        for key in ("max_abs_gap", "mean_abs_gap", "final_gap"):
            assert key in text

    def test_seed_override_changes_results(self, tmp_path, tiny_cfg):
        out_a = tmp_path / "sa"
        out_b = tmp_path / "sb"
        main(["run-hybrid", tiny_cfg, "--seed", "1", "--out-dir", str(out_a)])
        main(["run-hybrid", tiny_cfg, "--seed", "2", "--out-dir", str(out_b)])
        assert (out_a / "hitrate.csv").read_bytes() != \
            (out_b / "hitrate.csv").read_bytes()
