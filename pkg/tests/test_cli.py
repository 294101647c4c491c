from __future__ import annotations

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import config_dict
from fbmsteer.cli import EXIT_ERROR, EXIT_FAILED, EXIT_OK, OUTPUT_ENV, main

# a coarse grid misses the target by ~1e-2 when replayed on the fine grid
SMALL = {"grid": {"K": 64}, "n_paths": 4, "tolerances": {"refined_terminal": 5e-2}}


def write_config(tmp_path, name="scenario.json", **changes) -> str:
    merged = {k: dict(v) if isinstance(v, dict) else v for k, v in SMALL.items()}
    for k, v in changes.items():
        merged[k] = {**merged[k], **v} if isinstance(v, dict) and isinstance(merged.get(k), dict) else v
    d = config_dict(**merged)
    path = tmp_path / name
    path.write_text(json.dumps(d))
    return str(path)


def run_cli(tmp_path, command, out="out", config=None, extra=(), **changes):
    cfg = config or write_config(tmp_path, **changes)
    out_dir = tmp_path / out
    code = main(["--command", command, "--config", cfg, "--out", str(out_dir), "-q", *extra])
    return code, out_dir


def load_report(out_dir) -> dict:
    return json.loads((out_dir / "report.json").read_text())


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


ZERO = dict(f={"name": "zero"}, g={"name": "zero"}, sigma={"amplitude": 0.0},
            history={"constant": [], "slope": []}, target=[0.0] * 8)


class TestCommands:
    def test_zero_problem_has_zero_trajectory(self, tmp_path):
        code, out = run_cli(tmp_path, "solve", **ZERO)
        assert code == EXIT_OK
        header, rows = read_csv(out / "trajectory.csv")
        assert header == ["t"] + [f"mode_{n}" for n in range(1, 9)]
        assert np.all(rows[:, 1:] == 0.0) and rows.shape == (65, 9)
        np.testing.assert_allclose(rows[:, 0], np.linspace(0, 1, 65), atol=1e-16)

    def test_steer_to_zero_target(self, tmp_path):
        code, out = run_cli(tmp_path, "steer", **ZERO)
        assert code == EXIT_OK
        _, u = read_csv(out / "control.csv")
        assert np.all(u[:, 1:] == 0.0)

    def test_noiseless_steer(self, tmp_path):
        code, out = run_cli(tmp_path, "steer", sigma={"amplitude": 0.0})
        rep = load_report(out)
        assert code == EXIT_OK and rep["passed"]
        assert {s["name"] for s in rep["suites"]} == {"steer-converged", "terminal-error", "replay-consistency",
                                                     "refined-terminal-error"}
        assert rep["summary"]["noisy"] is False
        _, traj = read_csv(out / "trajectory.csv")
        np.testing.assert_allclose(traj[-1, 1:], config_dict()["target"], atol=1e-8)

    def test_solve_report(self, tmp_path):
        code, out = run_cli(tmp_path, "solve")
        rep = load_report(out)
        assert code == EXIT_OK
        assert rep["provenance"]["seed"] == 20261015 and rep["provenance"]["backend"] in ("numba", "numpy")
        assert rep["summary"]["notes"]["L_star_M_star"] < rep["summary"]["notes"]["H3_limit"]

    def test_mc_batch_workers_agree(self, tmp_path):
        cfg = write_config(tmp_path, n_paths=3)
        assert run_cli(tmp_path, "mc-batch", "one", cfg)[0] == EXIT_OK
        assert run_cli(tmp_path, "mc-batch", "two", cfg, extra=("--workers", "2"))[0] == EXIT_OK
        a = (tmp_path / "one" / "paths.csv").read_bytes()
        assert a == (tmp_path / "two" / "paths.csv").read_bytes()
        _, rows = read_csv(tmp_path / "one" / "paths.csv")
        np.testing.assert_array_equal(rows[:, 0], [0, 1, 2])


class TestExitCodes:
    def test_failing_suite_exits_one(self, tmp_path):
        code, out = run_cli(tmp_path, "steer", tolerances={"refined_terminal": 1e-9})
        assert code == EXIT_FAILED
        rep = load_report(out)
        assert not rep["passed"]
        assert [s["name"] for s in rep["suites"] if not s["passed"]] == ["refined-terminal-error"]

    def test_invalid_config_exits_two_without_files(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "solve", potential={"gamma": -1.0}, hurst=0.4)
        assert code == EXIT_ERROR and not out.exists()
        err = capsys.readouterr().err
        assert "(H.1)" in err and err.count("\n  - ") == 2

    def test_syntax_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"hurst": 0.7,,}')
        code, out = run_cli(tmp_path, "solve", config=str(bad))
        assert code == EXIT_ERROR and "line 1, column 15" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert run_cli(tmp_path, "solve", config=str(tmp_path / "nope.json"))[0] == EXIT_ERROR

    def test_runtime_error_leaves_no_files(self, tmp_path, capsys):
        code, out = run_cli(tmp_path, "solve", tolerances={"max_iter": 1})
        assert code == EXIT_ERROR
        assert not out.exists() or not any(out.iterdir())
        assert "PicardDivergenceError" in capsys.readouterr().err

    def test_unknown_command(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["--command", "fly"])
        assert exc.value.code == 2

    def test_negative_seed(self, tmp_path):
        assert run_cli(tmp_path, "solve", extra=("--seed", "-1"))[0] == EXIT_ERROR


class TestReproducibility:
    def test_same_seed_same_output(self, tmp_path):
        cfg = write_config(tmp_path)
        run_cli(tmp_path, "steer", "a", cfg)
        run_cli(tmp_path, "steer", "b", cfg)
        for name in ("trajectory.csv", "control.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        ra, rb = load_report(tmp_path / "a"), load_report(tmp_path / "b")
        ra.pop("meta"), rb.pop("meta")
        assert ra == rb

    def test_seed_override_changes_noise(self, tmp_path):
        cfg = write_config(tmp_path)
        run_cli(tmp_path, "solve", "a", cfg)
        run_cli(tmp_path, "solve", "b", cfg, extra=("--seed", "5"))
        assert load_report(tmp_path / "b")["config"]["seed"] == 5
        assert (tmp_path / "a" / "trajectory.csv").read_bytes() != (tmp_path / "b" / "trajectory.csv").read_bytes()

    def test_echoed_config_reproduces_run(self, tmp_path):
        run_cli(tmp_path, "steer", "a", extra=("--seed", "11", "--tol", "1e-11"))
        echoed = tmp_path / "echo.json"
        echoed.write_text(json.dumps(load_report(tmp_path / "a")["config"]))
        run_cli(tmp_path, "steer", "b", config=str(echoed))
        assert (tmp_path / "a" / "control.csv").read_bytes() == (tmp_path / "b" / "control.csv").read_bytes()
        assert load_report(tmp_path / "b")["config"]["tolerances"]["steer"] == 1e-11


class TestOutputDirectory:
    def test_env_var_used_without_out(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        cfg = write_config(tmp_path)
        assert main(["--command", "solve", "--config", cfg, "-q"]) == EXIT_OK
        assert (tmp_path / "env" / "report.json").exists()

    def test_out_beats_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "env"))
        code, out = run_cli(tmp_path, "solve", "flag")
        assert code == EXIT_OK and (out / "report.json").exists() and not (tmp_path / "env").exists()

    def test_config_dir_is_last_resort(self, tmp_path, monkeypatch):
        monkeypatch.delenv(OUTPUT_ENV, raising=False)
        cfg = write_config(tmp_path, output_dir=str(tmp_path / "from-config"))
        assert main(["--command", "solve", "--config", cfg, "-q"]) == EXIT_OK
        assert (tmp_path / "from-config" / "trajectory.csv").exists()

    def test_no_staging_left_behind(self, tmp_path):
        _, out = run_cli(tmp_path, "solve")
        assert sorted(p.name for p in out.iterdir()) == ["control.csv", "report.json", "trajectory.csv"]


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "fbmsteer", "--help"], capture_output=True, text=True, check=True)
    assert "--command" in out.stdout
