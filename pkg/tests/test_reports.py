"""Tests for reports module."""

import json
import logging

import numpy as np
import pytest

from src.evolution import TimeGrid, Trajectory
from src.reports import (
    MANIFEST_NAME,
    IncompatibleRunsError,
    RunReporter,
    compare_runs,
    generate_markdown_report,
    read_csv,
    read_dump,
    verify_manifest,
    write_csv,
    write_dump,
)
from src.spectral import DomainSpec, SpectralField
from src.verify import CheckResult


@pytest.fixture
def domain():
    return DomainSpec(d=1, L=np.pi, Nx=8, Kv=3)


@pytest.fixture
def trajectory(domain):
    grid = TimeGrid(T=0.5, Nt=4)
    rng = np.random.default_rng(0)
    states = rng.standard_normal((5,) + domain.shape) + 1j * rng.standard_normal((5,) + domain.shape)
    return Trajectory(states, domain, grid)


def _metadata(domain, mode="simulate"):
    return {"mode": mode, "domain": domain.to_dict(), "seed": 0}


def test_csv_round_trip(tmp_path):
    """Test that numeric columns survive and text columns are skipped."""
    path = write_csv(tmp_path / "a.csv", ["t", "value", "label"], [(0.0, 1.5, "x"), (0.1, np.float64(2.25), "y")])
    columns = read_csv(path)
    assert set(columns) == {"t", "value"}
    assert list(columns["t"]) == [0.0, 0.1]
    assert list(columns["value"]) == [1.5, 2.25]


def test_csv_floats_are_exact(tmp_path):
    """Test that floats are written with full precision."""
    value = 1.0 / 3.0
    path = write_csv(tmp_path / "b.csv", ["x"], [(value,)])
    assert read_csv(path)["x"][0] == value


def test_dump_round_trip(tmp_path, trajectory):
    """Test the binary coefficient dump."""
    path = write_dump(tmp_path / "traj.kfpt", trajectory)
    loaded = read_dump(path)
    assert loaded.domain == trajectory.domain
    assert loaded.grid == trajectory.grid
    assert np.array_equal(loaded.states, trajectory.states)


def test_dump_rejects_bad_files(tmp_path, trajectory):
    """Test magic, length and truncation checks."""
    short = tmp_path / "short.kfpt"
    short.write_bytes(b"KF")
    with pytest.raises(ValueError, match="too short"):
        read_dump(short)

    path = write_dump(tmp_path / "traj.kfpt", trajectory)
    raw = path.read_bytes()
    bad = tmp_path / "bad.kfpt"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(ValueError, match="not a coefficient dump"):
        read_dump(bad)
    cut = tmp_path / "cut.kfpt"
    cut.write_bytes(raw[:-16])
    with pytest.raises(ValueError, match="expected"):
        read_dump(cut)


def test_reporter_manifest_checksums(tmp_path, domain, trajectory):
    """Test that the manifest lists every artifact and detects tampering."""
    reporter = RunReporter(tmp_path / "run")
    reporter.write_trajectory(trajectory)
    reporter.write_control(np.zeros(4), trajectory.grid)
    reporter.write_json({"a": np.float64(1.0), "b": np.arange(2)}, "summary.json")
    manifest_path = reporter.write_manifest({"seed": 0}, _metadata(domain))

    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    assert set(manifest["artifacts"]) == {"trajectory.csv", "control.csv", "summary.json"}
    assert manifest["config"] == {"seed": 0}
    assert manifest["mode"] == "simulate"
    assert verify_manifest(tmp_path / "run") == []

    (tmp_path / "run" / "control.csv").write_text("t_cell,u\n0.0,9.0\n", encoding="utf-8")
    assert verify_manifest(tmp_path / "run") == ["control.csv"]


def test_trajectory_csv_columns(tmp_path, trajectory):
    """Test the trajectory curve columns."""
    reporter = RunReporter(tmp_path)
    columns = read_csv(reporter.write_trajectory(trajectory))
    assert set(columns) == {"t", "normY", "normVv", "mass_mode_re", "momentum_re"}
    assert np.allclose(columns["t"], trajectory.grid.times())
    assert np.array_equal(columns["normY"], trajectory.normY_history)


def test_checks_summary(tmp_path):
    """Test the checks CSV and text summary."""
    checks = [
        CheckResult("R_identity", "identity", 10, 1e-14, 1e-12),
        CheckResult("bound_D", "inequality", 10, 1.5, 1e-8),
    ]
    csv_path, txt_path = RunReporter(tmp_path).write_checks(checks)
    assert list(read_csv(csv_path)["samples"]) == [10.0, 10.0]
    text = txt_path.read_text(encoding="utf-8")
    assert "✓ R_identity" in text
    assert "✗ bound_D" in text
    assert "1/2 checks passed" in text


def test_markdown_report_sections():
    """Test that each summary section renders."""
    summary = {
        "mode": "simulate",
        "metadata": {"started": "now", "seed": 3, "wall_time_s": 1.5,
                     "domain": {"d": 1, "L": np.pi, "Nx": 8, "Kv": 3}},
        "trajectory": {"norm_initial": 1.0, "norm_final": 0.5, "triple_norm": 0.7, "mass_drift": 0.0},
        "checks": [{"name": "dissipation", "passed": True, "worst_ratio": 1e-15, "tolerance": 1e-12,
                    "samples": 5}],
    }
    md = generate_markdown_report(summary)
    assert md.startswith("# Kinetic Fokker-Planck Run Report (simulate)")
    assert "**Seed:** 3" in md
    assert "Nx=8" in md
    assert "## Trajectory" in md
    assert "## Verification" in md
    assert "✓ **dissipation**" in md
    assert "## Optimization" not in md


def _run_dir(path, domain, normY, mode="simulate"):
    reporter = RunReporter(path)
    rows = zip([0.0, 0.5, 1.0], normY)
    reporter._track(write_csv(path / "trajectory.csv", ["t", "normY"], rows))
    reporter.write_manifest({}, _metadata(domain, mode))
    return path


def test_compare_identical_runs(tmp_path, domain):
    """Test that identical runs differ by zero."""
    a = _run_dir(tmp_path / "a", domain, [1.0, 0.9, 0.8])
    b = _run_dir(tmp_path / "b", domain, [1.0, 0.9, 0.8])
    result = compare_runs([a, b])
    assert result["pairs"][0]["max_diff"] == 0.0
    assert result["pairs"][0]["within_tol"]
    assert "convergence_ratio" not in result


def test_compare_refinement_chain(tmp_path, domain):
    """Test convergence ratios and observed orders over three runs."""
    runs = [
        _run_dir(tmp_path / "coarse", domain, [1.0, 1.0, 1.0]),
        _run_dir(tmp_path / "medium", domain, [1.0, 1.04, 1.04]),
        _run_dir(tmp_path / "fine", domain, [1.0, 1.05, 1.05]),
    ]
    result = compare_runs(runs, tol=0.1)
    assert result["pairs"][0]["max_diff"] == pytest.approx(0.04)
    assert result["pairs"][1]["max_diff"] == pytest.approx(0.01)
    assert result["convergence_ratio"]["normY"][0] == pytest.approx(4.0)
    assert result["observed_order"]["normY"][0] == pytest.approx(2.0)
    assert "pair_error" not in result


def test_compare_two_runs_reports_pair_error(tmp_path, domain, caplog):
    """Test that two runs report their single error instead of a ratio."""
    a = _run_dir(tmp_path / "coarse", domain, [1.0, 1.0, 1.0])
    b = _run_dir(tmp_path / "fine", domain, [1.0, 1.04, 1.04])
    with caplog.at_level(logging.INFO, logger="src.reports"):
        result = compare_runs([a, b])
    assert result["pair_error"]["normY"] == pytest.approx(0.04)
    assert result["convergence_note"] == "convergence ratios need three or more runs"
    assert "convergence_ratio" not in result
    assert "three or more runs" in caplog.text


def test_compare_rejects_incompatible_runs(tmp_path, domain):
    """Test domain, mode and manifest checks."""
    a = _run_dir(tmp_path / "a", domain, [1.0, 1.0, 1.0])
    b = _run_dir(tmp_path / "b", DomainSpec(d=1, Nx=16, Kv=3), [1.0, 1.0, 1.0])
    c = _run_dir(tmp_path / "c", domain, [1.0, 1.0, 1.0], mode="picard")
    with pytest.raises(IncompatibleRunsError, match="domains differ"):
        compare_runs([a, b])
    with pytest.raises(IncompatibleRunsError, match="modes differ"):
        compare_runs([a, c])
    (tmp_path / "empty").mkdir()
    with pytest.raises(IncompatibleRunsError, match="no manifest"):
        compare_runs([a, tmp_path / "empty"])
    with pytest.raises(ValueError, match="at least two"):
        compare_runs([a])


def test_compare_particle_densities(tmp_path, domain):
    """Test the z-score comparison of particle densities."""
    dirs = []
    for name, shift in (("a", 0.0), ("b", 0.01)):
        path = tmp_path / name
        reporter = RunReporter(path)
        rows = [(0.0, n, 1.0 + shift, 0.01) for n in range(4)]
        reporter._track(write_csv(path / "particle_density.csv", ["t", "node", "density", "density_se"], rows))
        reporter.write_manifest({}, _metadata(domain, "particles"))
        dirs.append(path)
    density = compare_runs(dirs)["pairs"][0]["particle_density"]
    assert density["rms_z"] == pytest.approx(1.0 / np.sqrt(2.0))
    assert density["within"]
    assert (tmp_path / "a" / MANIFEST_NAME).is_file()
