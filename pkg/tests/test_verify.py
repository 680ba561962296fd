"""Tests for verify module."""

import json

import numpy as np
import pytest

from src.evolution import TimeGrid
from src.operators import ControlShape, PotentialSpec
from src.spectral import DomainSpec, norm_Y
from src.verify import (
    CONSTANTS_VERSION,
    CheckResult,
    ConstantsTable,
    check_identity_suite,
    check_inequality_suite,
    estimate_constants,
    estimate_n_norm,
    random_field,
)


@pytest.fixture
def domain():
    return DomainSpec(d=1, L=np.pi, Nx=16, Kv=7)


@pytest.fixture
def U(domain):
    return PotentialSpec.create(domain, "wrapped-gaussian", 0.5)


@pytest.fixture
def alpha(domain):
    return ControlShape.create(domain, "gaussian", width=1.0)


def test_random_field_is_real_and_scaled(domain):
    """Test the seeded random field generator."""
    rng = np.random.default_rng(0)
    y = random_field(domain, rng, amplitude=2.5)
    assert y.is_real()
    assert norm_Y(y) == pytest.approx(2.5)
    band = random_field(domain, np.random.default_rng(0), band_limited=True)
    assert np.all(band.coeffs[6:11] == 0.0)


def test_random_field_is_seeded(domain):
    """Test that the same seed reproduces the same field."""
    a = random_field(domain, np.random.default_rng(9))
    b = random_field(domain, np.random.default_rng(9))
    assert np.array_equal(a.coeffs, b.coeffs)


def test_check_result_verdicts():
    """Test pass/fail logic for identities and inequalities."""
    assert CheckResult("a", "identity", 3, 1e-13, 1e-12).passed
    assert not CheckResult("a", "identity", 3, 1e-11, 1e-12).passed
    assert CheckResult("b", "inequality", 3, 1.0 + 1e-9, 1e-8).passed
    assert not CheckResult("b", "inequality", 3, 1.01, 1e-8).passed
    data = CheckResult("b", "inequality", 3, 0.5, 1e-8).to_dict()
    assert data["passed"] is True
    assert data["samples"] == 3


def test_identity_suite_passes(domain, U, alpha):
    """Test that every discrete identity holds on random fields."""
    results = check_identity_suite(domain, U, alpha, n_samples=10, seed=0)
    names = {r.name for r in results}
    assert {"R_identity", "dissipation", "A_adjoint", "N_of_one_equals_B",
            "mu_divergence_ladder", "mass_mode_annihilation", "momentum_balance"} <= names
    failed = [r.name for r in results if not r.passed]
    assert failed == []


def test_inequality_suite_passes(domain, U, alpha):
    """Test that every operator bound holds on random samples."""
    results = check_inequality_suite(domain, U, alpha, n_samples=20, seed=1, n_trajectories=3)
    assert len(results) == 13
    names = {r.name for r in results}
    assert {"h1_lipschitz_split", "h2_lipschitz_split", "h1_lipschitz_time", "h2_lipschitz_time",
            "N_bound", "convolution_sup_bound", "convolution_sup_bound_unmasked"} <= names
    for r in results:
        assert r.passed, r.name
        assert r.worst_ratio <= 1.0 + 1e-8


def test_suites_reject_empty_sampling(domain, U, alpha):
    """Test sample count validation."""
    with pytest.raises(ValueError, match="n_samples must be >= 1"):
        check_identity_suite(domain, U, alpha, n_samples=0)
    with pytest.raises(ValueError, match="n_samples must be >= 1"):
        check_inequality_suite(domain, U, alpha, n_samples=0)


def test_n_norm_vanishes_without_control(domain, U):
    """Test that ||N|| is zero when alpha = 0."""
    zero = ControlShape.create(domain, "zero")
    assert estimate_n_norm(domain, U, zero, np.random.default_rng(0)) == (0.0, 0.0)


def test_n_norm_positive_with_control(domain, U, alpha):
    """Test that power iteration finds a positive ||N|| bounded by sqrt(2)||alpha||_inf."""
    estimate, power = estimate_n_norm(domain, U, alpha, np.random.default_rng(0), n_iter=20, n_random=5)
    assert 0.0 < power <= estimate
    assert estimate <= np.sqrt(2.0) * alpha.norm_Linf + 1e-12


def test_estimate_constants_table(domain, U, alpha, tmp_path):
    """Test the constants table contents and persistence."""
    grid = TimeGrid(T=0.1, Nt=20)
    table = estimate_constants(domain, U, alpha, grid, seed=0, batch_size=3, n_batches=2, n_bound_samples=2)
    assert table.c_hat > 0
    assert len(table.c_hat_batches) == 2
    assert table.c_hat == max(table.c_hat_batches)
    assert table.U_norm_L2 == pytest.approx(U.norm_L2)
    assert table.domain == domain.to_dict()
    assert table.grid == {"T": 0.1, "Nt": 20}
    assert table.label == "empirical"
    assert np.isfinite(table.solution_bound)

    path = table.save(tmp_path / "constants.json")
    loaded = ConstantsTable.load(path)
    assert loaded.to_dict() == table.to_dict()


def test_constants_version_mismatch(domain, U, alpha, tmp_path):
    """Test that tables from another version are refused."""
    grid = TimeGrid(T=0.1, Nt=20)
    table = estimate_constants(domain, U, alpha, grid, batch_size=1, n_batches=1, n_bound_samples=1)
    data = table.to_dict()
    data["version"] = CONSTANTS_VERSION + 1
    path = tmp_path / "old.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(ValueError, match="version"):
        ConstantsTable.load(path)
