import json

import pytest

from conftest import stub_command
from epsbo.cli import cli_main
from epsbo.experiment import load_rows, summary_path_for


def run_flags(tmp_path, **extra):
    out = tmp_path / "r.csv"
    args = [
        "run",
        "--objective", "ackley2",
        "--policy", "eps-ts",
        "--epsilon", "0.5",
        "--num-paths", "4",
        "--spectral-points", "100",
        "--init", "5",
        "--iters", "2",
        "--trials", "1",
        "--seed", "7",
        "--out", str(out),
    ]
    for flag, value in extra.items():
        args += [flag, value]
    return args, out


class TestRun:
    def test_writes_files_and_exits_zero(self, tmp_path, capsys):
        args, out = run_flags(tmp_path)
        assert cli_main(args) == 0
        assert out.exists() and summary_path_for(out).exists()
        rows = load_rows(out)
        assert len(rows) == 2
        assert "completed 1/1 trials" in capsys.readouterr().out

    def test_jsonl_format(self, tmp_path):
        out = tmp_path / "r.jsonl"
        args = [
            "run", "--objective", "ackley2", "--policy", "generic-ts",
            "--spectral-points", "100", "--init", "5", "--iters", "2",
            "--seed", "1", "--out", str(out), "--format", "jsonl",
        ]
        assert cli_main(args) == 0
        assert len(load_rows(out)) == 2

    def test_config_file(self, tmp_path, capsys):
        cfg = {
            "objective": "ackley2",
            "policy": "generic-ts",
            "spectral-points": 100,
            "init": 5,
            "iters": 2,
            "seed": 3,
        }
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(cfg))
        assert cli_main(["run", "--config", str(path)]) == 0

    def test_flags_override_config_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"objective": "ackley2", "iters": 1}))
        out = tmp_path / "o.csv"
        args = [
            "run", "--config", str(path), "--policy", "generic-ts",
            "--spectral-points", "100", "--init", "5", "--iters", "2",
            "--out", str(out),
        ]
        assert cli_main(args) == 0
        assert len(load_rows(out)) == 2

    def test_missing_objective_is_config_error(self, capsys):
        assert cli_main(["run", "--iters", "2"]) == 1
        assert "objective" in capsys.readouterr().err

    def test_epsilon_with_ei_rejected(self, tmp_path, capsys):
        args = [
            "run", "--objective", "ackley2", "--policy", "ei",
            "--epsilon", "0.5", "--init", "5", "--iters", "1",
        ]
        assert cli_main(args) == 1
        assert "--epsilon" in capsys.readouterr().err

    def test_all_trials_failing_is_runtime_error(self, capsys):
        cmd = " ".join(stub_command("nan"))
        args = [
            "run", "--external-cmd", cmd, "--box", "0:1,0:1",
            "--policy", "generic-ts", "--spectral-points", "100",
            "--init", "4", "--iters", "1",
        ]
        assert cli_main(args) == 2


class TestValidateConfig:
    def test_valid(self, capsys):
        args = [
            "validate-config", "--objective", "ackley2", "--policy", "eps-ts",
            "--epsilon", "0.5", "--init", "5", "--iters", "2",
        ]
        assert cli_main(args) == 0
        assert "ok" in capsys.readouterr().out

    def test_epsilon_out_of_range_names_field(self, capsys):
        args = [
            "validate-config", "--objective", "ackley2", "--policy", "eps-ts",
            "--epsilon", "1.5", "--init", "5", "--iters", "2",
        ]
        assert cli_main(args) == 1
        assert "epsilon" in capsys.readouterr().err

    def test_bad_config_file_key(self, tmp_path, capsys):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"objective": "ackley2", "bogus": 1}))
        assert cli_main(["validate-config", "--config", str(path)]) == 1
        assert "bogus" in capsys.readouterr().err


class TestUsage:
    def test_unknown_flag(self, capsys):
        assert cli_main(["run", "--objective", "ackley2", "--frobnicate"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_unknown_command(self):
        assert cli_main(["explode"]) == 1

    def test_bench_list(self, capsys):
        assert cli_main(["bench-list"]) == 0
        out = capsys.readouterr().out
        assert "ackley2" in out and "rosenbrock6" in out and "f_star=0" in out
