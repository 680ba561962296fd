"""Integration tests for CLI."""

import json
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import pytest

from src.cli import EXIT_BLOWUP, EXIT_INVALID, EXIT_OK, EXIT_STALLED, EXIT_USAGE, main
from src.control import TrackingProblem
from src.reports import MANIFEST_NAME, read_csv, verify_manifest

TINY = ["domain.Nx=8", "domain.Kv=3", "time.T=0.1", "time.Nt=10"]


def _args(command, out, overrides=(), extra=()):
    argv = [command, "--out", str(out)]
    for item in list(TINY) + list(overrides):
        argv += ["--override", item]
    return argv + list(extra)


def _summary(out: Path) -> dict:
    with open(out / "summary.json", "r", encoding="utf-8") as f:
        return json.load(f)


def test_no_command_prints_help(capsys):
    """Test that a bare invocation is a usage error."""
    assert main([]) == EXIT_USAGE
    assert "simulate" in capsys.readouterr().out


def test_invalid_override_exits_2(tmp_path, capsys):
    """Test that schema violations are reported per field."""
    code = main(_args("simulate", tmp_path / "out", ["domain.Nx=33"]))
    assert code == EXIT_INVALID
    assert "domain.Nx" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_bad_config_file_exits_2(tmp_path, capsys):
    """Test unknown keys in a config file."""
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"domain": {"Ny": 8}}), encoding="utf-8")
    code = main(["simulate", "--config", str(config), "--out", str(tmp_path / "out")])
    assert code == EXIT_INVALID
    assert "domain.Ny: unknown field" in capsys.readouterr().err


def test_simulate_writes_artifacts(tmp_path):
    """Test a small simulate run end to end."""
    out = tmp_path / "sim"
    assert main(_args("simulate", out, ["control.value=0.3"], ["--seed", "2"])) == EXIT_OK
    for name in ("trajectory.csv", "control.csv", "trajectory.kfpt", "summary.json", "report.md", MANIFEST_NAME):
        assert (out / name).is_file(), name
    assert verify_manifest(out) == []
    summary = _summary(out)
    assert summary["metadata"]["status"] == "ok"
    assert summary["metadata"]["seed"] == 2
    assert summary["trajectory"]["mass_drift"] < 1e-12
    assert list(read_csv(out / "control.csv")["u"]) == [0.3] * 10


def test_control_file(tmp_path):
    """Test that a control CSV drives the march."""
    control = tmp_path / "u.csv"
    control.write_text("t_cell,u\n" + "".join(f"{0.01 * n},{0.1 * (n % 2)}\n" for n in range(10)),
                       encoding="utf-8")
    out = tmp_path / "sim"
    assert main(_args("simulate", out, [f"control.file={control}"])) == EXIT_OK
    assert list(read_csv(out / "control.csv")["u"]) == [0.1 * (n % 2) for n in range(10)]

    short = tmp_path / "short.csv"
    short.write_text("t_cell,u\n0.0,0.1\n", encoding="utf-8")
    assert main(_args("simulate", tmp_path / "bad", [f"control.file={short}"])) == EXIT_INVALID
    assert _summary(tmp_path / "bad")["metadata"]["status"] == "invalid"


def test_blowup_exits_3(tmp_path, capsys):
    """Test that a huge datum trips the blow-up guard."""
    out = tmp_path / "boom"
    argv = ["simulate", "--out", str(out)]
    for item in ["domain.Nx=16", "domain.Kv=7", "initial.amplitude=1000.0", "time.T=1.0", "time.Nt=200"]:
        argv += ["--override", item]
    assert main(argv) == EXIT_BLOWUP
    assert "blow-up" in capsys.readouterr().err
    summary = _summary(out)
    assert summary["metadata"]["status"] == "blow-up"
    assert summary["metadata"]["exit_code"] == EXIT_BLOWUP
    assert 1 <= summary["step"] <= 200
    assert (out / MANIFEST_NAME).is_file()


def test_same_seed_is_bit_identical(tmp_path):
    """Test that particle outputs depend only on the seed."""
    overrides = ["particles.m=50", "particles.replicates=2", "particles.dt=0.01", "particles.T=0.02",
                 "particles.record_times=[0.0, 0.02]"]
    for name in ("a", "b"):
        assert main(_args("particles", tmp_path / name, overrides, ["--seed", "7"])) == EXIT_OK
    for name in ("particle_density.csv", "stats.csv", "snapshot.csv", "meanfield.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    summary = _summary(tmp_path / "a")
    assert summary["particles"]["m"] == 50
    assert summary["particles"]["replicates"] == 2
    assert summary["particles"]["density_band_997"] > 0


def test_verify_mode(tmp_path):
    """Test a small verification run."""
    out = tmp_path / "verify"
    overrides = ["domain.Nx=16", "domain.Kv=7", "verify.n_identity=3", "verify.n_inequality=5",
                 "verify.n_trajectories=2", "verify.batch_size=2", "verify.n_batches=1", "verify.bound_samples=1"]
    assert main(_args("verify", out, overrides)) == EXIT_OK
    assert (out / "checks.csv").is_file()
    assert "checks passed" in (out / "checks.txt").read_text(encoding="utf-8")
    summary = _summary(out)
    assert all(c["passed"] for c in summary["checks"])
    assert summary["constants"]["c_hat"] > 0

    # a stored table is reused when the domain matches
    again = tmp_path / "again"
    extra = overrides + [f"verify.constants_file={out / 'constants.json'}"]
    assert main(_args("verify", again, extra)) == EXIT_OK
    assert _summary(again)["constants"] == summary["constants"]


def test_optimize_stall_exits_4(tmp_path):
    """Test that a stalled line search maps to exit status 4."""
    overrides = ["control.max_iter=2", "verify.batch_size=1", "verify.n_batches=1", "verify.bound_samples=1"]
    solve = TrackingProblem.solve

    def stalled_solve(self, u0, opts=None):
        return replace(solve(self, u0, opts), stalled=True)

    with patch.object(TrackingProblem, "solve", stalled_solve):
        code = main(_args("optimize", tmp_path / "opt", overrides))
    assert code == EXIT_STALLED
    summary = _summary(tmp_path / "opt")
    assert summary["metadata"]["status"] == "stalled"
    assert summary["optimization"]["stalled"] is True
    assert (tmp_path / "opt" / "optimizer_log.csv").is_file()


def test_compare_runs(tmp_path, capsys):
    """Test compare on identical and incompatible runs."""
    for name in ("a", "b"):
        assert main(_args("simulate", tmp_path / name)) == EXIT_OK
    capsys.readouterr()
    code = main(["compare", str(tmp_path / "a"), str(tmp_path / "b"), "--out", str(tmp_path / "cmp")])
    assert code == EXIT_OK
    assert "max diff 0.000e+00" in capsys.readouterr().out
    with open(tmp_path / "cmp" / "compare.json", "r", encoding="utf-8") as f:
        assert json.load(f)["pairs"][0]["within_tol"] is True

    assert main(["compare", str(tmp_path / "a")]) == EXIT_USAGE
    assert main(_args("simulate", tmp_path / "c", ["domain.Nx=16"])) == EXIT_OK
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "c")]) == EXIT_INVALID


@pytest.mark.parametrize("command", ["simulate", "picard"])
def test_markdown_report_written(tmp_path, command):
    """Test that each run leaves a Markdown report."""
    out = tmp_path / command
    overrides = ["verify.batch_size=1", "verify.n_batches=1", "verify.bound_samples=1"]
    assert main(_args(command, out, overrides)) == EXIT_OK
    report = (out / "report.md").read_text(encoding="utf-8")
    assert report.startswith(f"# Kinetic Fokker-Planck Run Report ({command})")
