"""Tests for spectral module."""

import numpy as np
import pytest

from src.spectral import (
    DomainSpec,
    MomentResidueError,
    SpectralField,
    build_basis,
    dual_norm_Vv,
    evaluate,
    grad_v,
    hermite_functions,
    inner_Y,
    make_real,
    moments,
    norm_Vv,
    norm_Y,
    stacked_norms,
    to_coeffs,
    to_nodal,
)


@pytest.fixture
def domain():
    return DomainSpec(d=1, L=np.pi, Nx=16, Kv=7)


def _cos_wave(domain, amplitude=1.0, k=(0,)):
    x = domain.grid()[0]
    return SpectralField.from_nodal_slices(domain, {k: amplitude * np.cos(np.pi * x / domain.L)})


def test_domain_defaults():
    """Test the default truncation and derived sizes."""
    domain = DomainSpec()
    assert domain.shape == (64, 32)
    assert domain.volume == pytest.approx(2 * np.pi)
    assert domain.h == pytest.approx(2 * np.pi / 64)
    assert domain.to_dict() == {"d": 1, "L": float(np.pi), "Nx": 64, "Kv": 31}


def test_domain_invalid_params():
    """Test that invalid truncations raise errors."""
    with pytest.raises(ValueError, match="d must be 1 or 2"):
        DomainSpec(d=3)
    with pytest.raises(ValueError, match="Nx must be even"):
        DomainSpec(Nx=15)
    with pytest.raises(ValueError, match="Nx must be even"):
        DomainSpec(Nx=2)
    with pytest.raises(ValueError, match="Kv must be >= 2"):
        DomainSpec(Kv=1)
    with pytest.raises(ValueError, match="L must be positive"):
        DomainSpec(L=0.0)


def test_grid_two_dimensional():
    """Test grid layout for d = 2."""
    domain = DomainSpec(d=2, Nx=8, Kv=3)
    grid = domain.grid()
    assert grid.shape == (2, 8, 8)
    assert grid[0, 0, 0] == pytest.approx(-np.pi)
    assert grid[1, 0, 1] == pytest.approx(-np.pi + domain.h)
    assert domain.shape == (8, 8, 4, 4)


def test_transform_round_trip(domain):
    """Test that to_coeffs inverts to_nodal."""
    rng = np.random.default_rng(3)
    values = rng.standard_normal(domain.spatial_shape)
    back = to_nodal(to_coeffs(values, domain), domain)
    assert np.allclose(back.real, values, atol=1e-13)
    assert np.allclose(back.imag, 0.0, atol=1e-13)


def test_single_mode_nodal_values(domain):
    """Test that mode j has nodal values exp(i pi j x / L)."""
    y = SpectralField.mode(domain, (0,), j=(1,))
    x = domain.grid()[0]
    nodal = to_nodal(y.coeffs[:, 0], domain)
    assert np.allclose(nodal, np.exp(1j * np.pi * x / domain.L), atol=1e-13)


def test_cosine_profile_coefficients(domain):
    """Test that a cosine profile lands on j = +-1 with half amplitude."""
    y = _cos_wave(domain, amplitude=0.3)
    c = y.coeffs[:, 0]
    assert np.allclose([c[1], c[-1]], [0.15, 0.15], atol=1e-15)
    c_rest = np.delete(c, [1, domain.Nx - 1])
    assert np.max(np.abs(c_rest)) < 1e-14
    assert y.is_real()


def test_field_rejects_bad_input(domain):
    """Test shape and finiteness validation."""
    with pytest.raises(ValueError, match="does not match domain shape"):
        SpectralField(np.zeros((4, 4)), domain)
    bad = np.zeros(domain.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        SpectralField(bad, domain)


def test_field_is_immutable(domain):
    """Test that stored coefficients are read-only copies."""
    raw = np.zeros(domain.shape, dtype=complex)
    y = SpectralField(raw, domain)
    raw[0, 0] = 1.0
    assert y.coeffs[0, 0] == 0.0
    with pytest.raises(ValueError):
        y.coeffs[0, 0] = 1.0


def test_field_arithmetic_checks_domain(domain):
    """Test that fields on different domains cannot be combined."""
    other = DomainSpec(Nx=8, Kv=7)
    with pytest.raises(ValueError):
        SpectralField.zeros(domain) + SpectralField.zeros(other)
    y = SpectralField.mode(domain, (1,))
    assert norm_Y(2.0 * y - y) == pytest.approx(norm_Y(y))


def test_make_real_symmetrizes(domain):
    """Test that make_real yields a conjugate-symmetric field."""
    rng = np.random.default_rng(0)
    raw = rng.standard_normal(domain.shape) + 1j * rng.standard_normal(domain.shape)
    assert not SpectralField(raw, domain).is_real()
    assert SpectralField(make_real(raw, domain), domain).is_real()


def test_hermite_recurrence_values():
    """Test the normalized Hermite values against closed forms."""
    v = np.linspace(-2.0, 2.0, 9)
    table = hermite_functions(v, 3)
    assert np.allclose(table[0], 1.0)
    assert np.allclose(table[1], v)
    assert np.allclose(table[2], (v ** 2 - 1.0) / np.sqrt(2.0))
    assert np.allclose(table[3], (v ** 3 - 3.0 * v) / np.sqrt(6.0))


def test_basis_gram_is_identity():
    """Test quadrature orthonormality of the Hermite basis."""
    basis = build_basis(DomainSpec(Nx=8, Kv=15))
    assert np.allclose(basis.gram(), np.eye(16), atol=1e-12)


def test_basis_ladder_tables():
    """Test <v H_k, H_l> and <H_k', H_l> against the ladder coefficients."""
    basis = build_basis(DomainSpec(Nx=8, Kv=15))
    moment = basis.moment_matrix(1)
    deriv = basis.derivative_matrix()
    for k in range(15):
        assert moment[k, k + 1] == pytest.approx(np.sqrt(k + 1.0), abs=1e-10)
        assert deriv[k + 1, k] == pytest.approx(np.sqrt(k + 1.0), abs=1e-10)
    assert np.allclose(np.diag(moment), 0.0, atol=1e-10)


def test_basis_recurrence_limit():
    """Test that build_basis refuses degrees beyond the recurrence limit."""
    with pytest.raises(ValueError, match="recurrence limit"):
        build_basis(DomainSpec(Nx=4, Kv=181))


def test_norms_of_single_modes(domain):
    """Test Y, V_v and dual norms on basis elements."""
    vol = domain.volume
    h0 = SpectralField.mode(domain, (0,))
    h3 = SpectralField.mode(domain, (3,), j=(2,))
    assert norm_Y(h0) == pytest.approx(np.sqrt(vol))
    assert norm_Vv(h0) == pytest.approx(np.sqrt(vol))
    assert norm_Y(h3) == pytest.approx(np.sqrt(vol))
    assert norm_Vv(h3) == pytest.approx(np.sqrt(4 * vol))
    assert dual_norm_Vv(h3) == pytest.approx(np.sqrt(vol / 4))
    assert inner_Y(h0, h3) == 0.0


def test_stacked_norms_match_single(domain):
    """Test that stacked norms agree with the field norms."""
    y = _cos_wave(domain, k=(2,))
    z = SpectralField.mode(domain, (1,))
    stack = np.stack([y.coeffs, z.coeffs])
    assert stacked_norms(stack, domain, "Y") == pytest.approx([norm_Y(y), norm_Y(z)])
    assert stacked_norms(stack, domain, "Vv") == pytest.approx([norm_Vv(y), norm_Vv(z)])
    assert stacked_norms(stack, domain, "Vv'") == pytest.approx([dual_norm_Vv(y), dual_norm_Vv(z)])
    with pytest.raises(ValueError, match="unknown norm kind"):
        stacked_norms(stack, domain, "H1")


def test_moments_of_density_wave(domain):
    """Test nodal density and momentum of a density wave."""
    y = _cos_wave(domain, amplitude=0.2)
    mf = moments(y)
    x = domain.grid()[0]
    assert np.allclose(mf.rho, 0.2 * np.cos(np.pi * x / domain.L), atol=1e-14)
    assert mf.rho_v.shape == (1, 16)
    assert np.allclose(mf.rho_v, 0.0)


def test_moments_reject_complex_field(domain):
    """Test that a lone non-real mode leaves an imaginary residue."""
    y = SpectralField.mode(domain, (0,), j=(1,))
    with pytest.raises(MomentResidueError, match="imaginary residue"):
        moments(y)


def test_evaluate_matches_closed_form(domain):
    """Test pointwise evaluation of cos(pi x / L) H_2(v) off the grid."""
    y = _cos_wave(domain, k=(2,))
    x = np.array([[0.1], [1.3], [-2.7]])
    v = np.array([[0.5], [-1.5], [2.0]])
    expected = np.cos(x[:, 0]) * (v[:, 0] ** 2 - 1.0) / np.sqrt(2.0)
    assert np.allclose(evaluate(y, x, v), expected, atol=1e-12)


def test_evaluate_rejects_bad_points(domain):
    """Test point shape validation."""
    y = SpectralField.zeros(domain)
    with pytest.raises(ValueError, match="points must have shape"):
        evaluate(y, np.zeros((3, 1)), np.zeros((2, 1)))
    assert np.all(evaluate(y, np.zeros((3, 1)), np.zeros((3, 1))) == 0.0)


def test_grad_v_lowers_degree(domain):
    """Test that d/dv H_1 = H_0 and d/dv H_2 = sqrt(2) H_1."""
    assert np.allclose(grad_v(SpectralField.mode(domain, (1,)), 0).coeffs,
                       SpectralField.mode(domain, (0,)).coeffs)
    assert np.allclose(grad_v(SpectralField.mode(domain, (2,)), 0).coeffs,
                       SpectralField.mode(domain, (1,), value=np.sqrt(2.0)).coeffs)
