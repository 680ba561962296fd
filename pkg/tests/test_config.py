"""Tests for config module."""

import json

import numpy as np
import pytest

from src.config import (
    OUT_DIR_ENV,
    ConfigError,
    RunConfig,
    build_control,
    build_domain,
    build_grid,
    build_initial,
    build_profile,
    load_config,
    parse_override,
    validate,
)
from src.spectral import DomainSpec, moments, norm_Y


def test_defaults_are_valid():
    """Test that the default configuration validates."""
    cfg = load_config(env={})
    assert validate(cfg) == []
    assert cfg.domain.Nx == 64
    assert cfg.domain.Kv == 31
    assert cfg.time.Nt == 2000
    assert cfg.initial.profile == "density-wave"
    assert cfg.out is None


def test_parse_override():
    """Test override parsing of JSON literals and plain strings."""
    assert parse_override("domain.Nx=32") == (["domain", "Nx"], 32)
    assert parse_override("particles.noise=false") == (["particles", "noise"], False)
    assert parse_override("alpha.center=[0.5]") == (["alpha", "center"], [0.5])
    assert parse_override("initial.profile=bump") == (["initial", "profile"], "bump")
    with pytest.raises(ConfigError, match="key=value"):
        parse_override("domain.Nx")


def test_file_and_overrides(tmp_path):
    """Test merging of file contents and overrides, overrides winning."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"domain": {"Nx": 32, "Kv": 15}, "seed": 3}), encoding="utf-8")
    cfg = load_config(str(path), ["domain.Kv=7", "time.T=0.5"], env={})
    assert cfg.domain.Nx == 32
    assert cfg.domain.Kv == 7
    assert cfg.time.T == 0.5
    assert cfg.seed == 3


def test_odd_nx_rejected():
    """Test that an odd Nx is reported by field name."""
    with pytest.raises(ConfigError) as exc_info:
        load_config(overrides=["domain.Nx=33"], env={})
    fields = [name for name, _ in exc_info.value.errors]
    assert fields == ["domain.Nx"]


def test_all_errors_reported_together():
    """Test that every invalid field is listed at once."""
    with pytest.raises(ConfigError) as exc_info:
        load_config(overrides=["domain.Kv=1", "potential.width=-1", "time.scheme=rk4"], env={})
    fields = {name for name, _ in exc_info.value.errors}
    assert {"domain.Kv", "potential.width", "time.scheme"} <= fields


def test_unknown_fields_rejected(tmp_path):
    """Test unknown keys in files and overrides."""
    with pytest.raises(ConfigError, match="unknown field"):
        load_config(overrides=["domain.Ny=4"], env={})
    with pytest.raises(ConfigError, match="unknown section"):
        load_config(overrides=["mesh.Nx=4"], env={})
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"domain": {"Nz": 3}}), encoding="utf-8")
    with pytest.raises(ConfigError, match="domain.Nz"):
        load_config(str(path), env={})


def test_bad_files(tmp_path):
    """Test missing files, invalid JSON and non-object documents."""
    with pytest.raises(ConfigError, match="file not found"):
        load_config(str(tmp_path / "missing.json"), env={})
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(str(broken), env={})
    listing = tmp_path / "list.json"
    listing.write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ConfigError, match="JSON object"):
        load_config(str(listing), env={})


def test_control_bounds_validation():
    """Test control box and value checks."""
    with pytest.raises(ConfigError, match="control.u_min/u_max"):
        load_config(overrides=["control.u_min=0.5"], env={})
    with pytest.raises(ConfigError, match="control.value"):
        load_config(overrides=["control.value=2.0"], env={})


def test_particle_horizon_checked():
    """Test that the particle horizon may not exceed the PDE horizon."""
    with pytest.raises(ConfigError, match="particles.T"):
        load_config(overrides=["mode=\"particles\"", "particles.T=2.0", "particles.record_times=[0.0]"], env={})


def test_out_dir_from_environment():
    """Test that KFP_OUT_DIR fills in a missing output directory."""
    cfg = load_config(env={OUT_DIR_ENV: "/tmp/kfp"})
    assert cfg.out == "/tmp/kfp"
    cfg = load_config(overrides=["out=\"elsewhere\""], env={OUT_DIR_ENV: "/tmp/kfp"})
    assert cfg.out == "elsewhere"


def test_builders():
    """Test domain, grid and control builders."""
    cfg = load_config(overrides=["domain.Nx=16", "domain.Kv=7", "time.Nt=10", "control.value=0.3"], env={})
    domain = build_domain(cfg)
    assert domain == DomainSpec(d=1, L=np.pi, Nx=16, Kv=7)
    grid = build_grid(cfg)
    assert grid.Nt == 10
    u = build_control(cfg, grid)
    assert list(u.values) == [0.3] * 10
    with pytest.raises(ConfigError, match="expected 10 control values"):
        build_control(cfg, grid, values=[0.1, 0.2])
    y0 = build_initial(cfg, domain)
    assert np.max(np.abs(moments(y0).rho)) == pytest.approx(1e-2)


@pytest.mark.parametrize("name", ["zero", "constant", "density-wave", "momentum-wave", "bump", "random"])
def test_profiles_are_real(name):
    """Test that every named profile is a real field on the domain."""
    domain = DomainSpec(d=1, Nx=16, Kv=7)
    y = build_profile(name, domain, 0.1)
    assert y.domain == domain
    assert y.is_real()


def test_profile_shapes():
    """Test the content of the analytic profiles."""
    domain = DomainSpec(d=1, Nx=16, Kv=7)
    x = domain.grid()[0]
    mom = moments(build_profile("momentum-wave", domain, 0.2))
    assert np.allclose(mom.rho, 0.0)
    assert np.allclose(mom.rho_v[0], 0.2 * np.cos(x))
    assert norm_Y(build_profile("random", domain, 0.3, seed=4)) == pytest.approx(0.3)
    const = build_profile("constant", domain, 0.5)
    assert const.coeffs[0, 0] == 0.5
    with pytest.raises(ValueError, match="unknown profile"):
        build_profile("sawtooth", domain, 0.1)


def test_to_dict_round_trip():
    """Test that the dictionary form reloads to the same configuration."""
    cfg = RunConfig()
    tree = cfg.to_dict()
    assert tree["domain"]["Nx"] == 64
    assert tree["particles"]["record_times"] == [0.0, 0.25, 0.5]
