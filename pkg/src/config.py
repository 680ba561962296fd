"""Run configuration: JSON schema, overrides and validation.
运行配置：JSON 结构、覆盖项与校验。

Defaults are merged with the config file and then with ``--override a.b=value``
pairs. The whole tree is validated before any computation, and every failing
field is reported at once.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .evolution import SCHEMES, ControlSignal, TimeGrid
from .operators import CONTROL_SHAPE_KINDS, POTENTIAL_KINDS, ControlShape, PotentialSpec
from .particles import FORCE_METHODS
from .spectral import MAX_HERMITE_DEGREE, DomainSpec, SpectralField
from .verify import random_field

MODES = ("simulate", "picard", "optimize", "particles", "verify")
PROFILES = ("zero", "constant", "density-wave", "momentum-wave", "bump", "random")
TARGETS = ("controlled-flow", "file")
OUT_DIR_ENV = "KFP_OUT_DIR"


class ConfigError(ValueError):
    """Schema violation; ``errors`` lists (field, message) pairs."""

    def __init__(self, errors: List[Tuple[str, str]]):
        self.errors = list(errors)
        lines = "; ".join(f"{name}: {msg}" for name, msg in self.errors)
        super().__init__(f"invalid configuration: {lines}")


@dataclass
class DomainConfig:
    d: int = 1
    L: float = math.pi
    Nx: int = 64
    Kv: int = 31


@dataclass
class PotentialConfig:
    kind: str = "wrapped-gaussian"
    width: float = 0.5


@dataclass
class AlphaConfig:
    kind: str = "gaussian"
    width: float = 1.0
    amplitude: float = 1.0
    center: Optional[List[float]] = None
    direction: Optional[List[float]] = None


@dataclass
class TimeConfig:
    T: float = 1.0
    Nt: int = 2000
    scheme: str = "imex-euler"
    picard_tol: float = 1e-9
    picard_max_iter: int = 50
    blowup_factor: float = 1e6


@dataclass
class InitialConfig:
    profile: str = "density-wave"
    amplitude: float = 1e-2
    width: float = 0.5


@dataclass
class ControlConfig:
    """Fixed control for simulate/picard/particles and the tracking problem for optimize."""

    file: Optional[str] = None
    value: float = 0.0
    u_min: float = -1.0
    u_max: float = 1.0
    beta: float = 1e-2
    target: str = "controlled-flow"
    target_file: Optional[str] = None
    target_profile: str = "density-wave"
    target_amplitude: float = 1e-2
    target_control: float = 0.5
    max_iter: int = 200
    tol_factor: float = 1e-6


@dataclass
class ParticlesConfig:
    m: int = 10000
    replicates: int = 8
    dt: float = 0.01
    T: float = 0.5
    method: str = "auto"
    noise: bool = True
    record_times: List[float] = field(default_factory=lambda: [0.0, 0.25, 0.5])


@dataclass
class VerifyConfig:
    n_identity: int = 100
    n_inequality: int = 200
    n_trajectories: int = 10
    batch_size: int = 50
    n_batches: int = 2
    bound_samples: int = 10
    solution_bounds: List[float] = field(default_factory=lambda: [1e-2, 1.0, 1e-2])
    constants_file: Optional[str] = None


@dataclass
class RunConfig:
    """Complete description of one run.
    单次运行的完整配置。
    """

    domain: DomainConfig = field(default_factory=DomainConfig)
    potential: PotentialConfig = field(default_factory=PotentialConfig)
    alpha: AlphaConfig = field(default_factory=AlphaConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    initial: InitialConfig = field(default_factory=InitialConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    particles: ParticlesConfig = field(default_factory=ParticlesConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    mode: str = "simulate"
    seed: int = 0
    out: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def parse_override(item: str) -> Tuple[List[str], Any]:
    """Split ``a.b=value``; the value is a JSON literal or else a plain string."""
    if "=" not in item:
        raise ConfigError([(item, "override must have the form key=value")])
    key, raw = item.split("=", 1)
    path = [part for part in key.strip().split(".") if part]
    if not path:
        raise ConfigError([(item, "override key is empty")])
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return path, value


def _merge(base: Dict[str, Any], update: Dict[str, Any], prefix: str, errors: List[Tuple[str, str]]):
    for key, value in update.items():
        name = f"{prefix}{key}"
        if key not in base:
            errors.append((name, "unknown field"))
        elif isinstance(base[key], dict):
            if isinstance(value, dict):
                _merge(base[key], value, f"{name}.", errors)
            else:
                errors.append((name, "expected an object"))
        else:
            base[key] = value


def _set_path(tree: Dict[str, Any], path: List[str], value: Any, errors: List[Tuple[str, str]]):
    node = tree
    for depth, part in enumerate(path[:-1]):
        if not isinstance(node.get(part), dict):
            errors.append((".".join(path[:depth + 1]), "unknown section"))
            return
        node = node[part]
    if path[-1] not in node or isinstance(node[path[-1]], dict):
        errors.append((".".join(path), "unknown field"))
        return
    node[path[-1]] = value


def _build(cls, data: Dict[str, Any]):
    kwargs = {}
    for f in fields(cls):
        value = data[f.name]
        default = f.default_factory() if callable(f.default_factory) else f.default
        kwargs[f.name] = _build(type(default), value) if is_dataclass(default) else value
    return cls(**kwargs)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def validate(cfg: RunConfig) -> List[Tuple[str, str]]:
    """Return every (field, message) violation of ``cfg``; empty when valid.
    校验配置并返回所有错误字段。
    """
    errors: List[Tuple[str, str]] = []

    def need(ok: bool, name: str, msg: str):
        if not ok:
            errors.append((name, msg))

    dom = cfg.domain
    need(dom.d in (1, 2) and _is_int(dom.d), "domain.d", "must be 1 or 2")
    need(_is_number(dom.L) and dom.L > 0, "domain.L", "must be a positive number")
    need(_is_int(dom.Nx) and dom.Nx >= 4 and dom.Nx % 2 == 0, "domain.Nx", "must be an even integer >= 4")
    need(_is_int(dom.Kv) and 2 <= dom.Kv <= MAX_HERMITE_DEGREE, "domain.Kv",
         f"must be an integer in [2, {MAX_HERMITE_DEGREE}]")

    pot = cfg.potential
    need(pot.kind in POTENTIAL_KINDS, "potential.kind", f"must be one of {POTENTIAL_KINDS}")
    need(_is_number(pot.width) and pot.width > 0, "potential.width", "must be positive")
    if _is_number(pot.width) and _is_number(dom.L):
        need(pot.width <= dom.L, "potential.width", "must not exceed domain.L")

    al = cfg.alpha
    need(al.kind in CONTROL_SHAPE_KINDS, "alpha.kind", f"must be one of {CONTROL_SHAPE_KINDS}")
    need(_is_number(al.width) and al.width > 0, "alpha.width", "must be positive")
    need(_is_number(al.amplitude), "alpha.amplitude", "must be a finite number")
    for name in ("center", "direction"):
        value = getattr(al, name)
        if value is not None:
            need(isinstance(value, list) and len(value) == dom.d and all(_is_number(x) for x in value),
                 f"alpha.{name}", f"must be a list of {dom.d} numbers")

    tm = cfg.time
    need(_is_number(tm.T) and tm.T > 0, "time.T", "must be positive")
    need(_is_int(tm.Nt) and tm.Nt >= 1, "time.Nt", "must be an integer >= 1")
    need(tm.scheme in SCHEMES, "time.scheme", f"must be one of {SCHEMES}")
    need(_is_number(tm.picard_tol) and tm.picard_tol > 0, "time.picard_tol", "must be positive")
    need(_is_int(tm.picard_max_iter) and tm.picard_max_iter >= 1, "time.picard_max_iter", "must be >= 1")
    need(_is_number(tm.blowup_factor) and tm.blowup_factor > 1, "time.blowup_factor", "must exceed 1")

    ini = cfg.initial
    need(ini.profile in PROFILES, "initial.profile", f"must be one of {PROFILES}")
    need(_is_number(ini.amplitude), "initial.amplitude", "must be a finite number")
    need(_is_number(ini.width) and ini.width > 0, "initial.width", "must be positive")

    ctl = cfg.control
    bounds_ok = _is_number(ctl.u_min) and _is_number(ctl.u_max)
    need(bounds_ok and ctl.u_min <= 0 <= ctl.u_max, "control.u_min/u_max", "must satisfy u_min <= 0 <= u_max")
    if bounds_ok and _is_number(ctl.value):
        need(ctl.u_min <= ctl.value <= ctl.u_max, "control.value", "must lie within [u_min, u_max]")
    else:
        need(_is_number(ctl.value), "control.value", "must be a finite number")
    if ctl.file is not None:
        need(Path(ctl.file).is_file(), "control.file", f"file not found: {ctl.file}")
    need(_is_number(ctl.beta) and ctl.beta > 0, "control.beta", "must be positive")
    need(ctl.target in TARGETS, "control.target", f"must be one of {TARGETS}")
    if ctl.target == "file":
        need(ctl.target_file is not None and Path(ctl.target_file).is_file(), "control.target_file",
             "must name an existing coefficient dump when target is 'file'")
    need(ctl.target_profile in PROFILES, "control.target_profile", f"must be one of {PROFILES}")
    need(_is_number(ctl.target_amplitude), "control.target_amplitude", "must be a finite number")
    if bounds_ok and _is_number(ctl.target_control):
        need(ctl.u_min <= ctl.target_control <= ctl.u_max, "control.target_control",
             "must lie within [u_min, u_max]")
    need(_is_int(ctl.max_iter) and ctl.max_iter >= 1, "control.max_iter", "must be >= 1")
    need(_is_number(ctl.tol_factor) and ctl.tol_factor > 0, "control.tol_factor", "must be positive")

    par = cfg.particles
    need(_is_int(par.m) and par.m >= 1, "particles.m", "must be an integer >= 1")
    need(_is_int(par.replicates) and par.replicates >= 1, "particles.replicates", "must be >= 1")
    need(_is_number(par.dt) and par.dt > 0, "particles.dt", "must be positive")
    need(_is_number(par.T) and par.T > 0, "particles.T", "must be positive")
    need(par.method in FORCE_METHODS, "particles.method", f"must be one of {FORCE_METHODS}")
    need(isinstance(par.noise, bool), "particles.noise", "must be true or false")
    times_ok = isinstance(par.record_times, list) and all(_is_number(t) for t in par.record_times)
    need(times_ok and len(par.record_times) > 0, "particles.record_times", "must be a non-empty list of numbers")
    if times_ok and _is_number(par.T):
        need(all(0 <= t <= par.T for t in par.record_times), "particles.record_times",
             "must lie within [0, particles.T]")
    # the PDE trajectory is the comparison oracle, so it must cover the particle horizon
    if cfg.mode == "particles" and _is_number(par.T) and _is_number(tm.T):
        need(par.T <= tm.T + 1e-12, "particles.T", "must not exceed time.T")

    ver = cfg.verify
    for name in ("n_identity", "n_inequality", "n_trajectories", "batch_size", "n_batches", "bound_samples"):
        need(_is_int(getattr(ver, name)) and getattr(ver, name) >= 1, f"verify.{name}", "must be an integer >= 1")
    sb = ver.solution_bounds
    need(isinstance(sb, list) and len(sb) == 3 and all(_is_number(x) and x >= 0 for x in sb),
         "verify.solution_bounds", "must be three nonnegative numbers [k0, k1, k2]")
    if ver.constants_file is not None:
        need(Path(ver.constants_file).is_file(), "verify.constants_file", f"file not found: {ver.constants_file}")

    need(cfg.mode in MODES, "mode", f"must be one of {MODES}")
    need(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a nonnegative integer")
    need(cfg.out is None or isinstance(cfg.out, str), "out", "must be a path string")
    return errors


def load_config(
    path: Optional[str] = None,
    overrides: Optional[Sequence[str]] = None,
    env: Optional[Dict[str, str]] = None,
) -> RunConfig:
    """Merge defaults, file and overrides, then validate.
    合并默认值、配置文件与覆盖项并校验。

    Args:
        path: JSON config file, optional (JSON 配置文件路径)
        overrides: ``a.b=value`` strings (覆盖项)
        env: Environment mapping, defaults to os.environ (环境变量)

    Raises:
        ConfigError: Listing every invalid field (列出所有无效字段)
    """
    env = os.environ if env is None else env
    tree = asdict(RunConfig())
    errors: List[Tuple[str, str]] = []

    if path is not None:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError([("config", f"file not found: {path}")])
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError([("config", f"invalid JSON: {e}")]) from e
        if not isinstance(data, dict):
            raise ConfigError([("config", "top level must be a JSON object")])
        _merge(tree, data, "", errors)

    for item in overrides or []:
        key, value = parse_override(item)
        _set_path(tree, key, value, errors)

    if errors:
        raise ConfigError(errors)
    if tree["out"] is None and env.get(OUT_DIR_ENV):
        tree["out"] = env[OUT_DIR_ENV]

    cfg = _build(RunConfig, tree)
    errors = validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def build_domain(cfg: RunConfig) -> DomainSpec:
    return DomainSpec(d=cfg.domain.d, L=float(cfg.domain.L), Nx=cfg.domain.Nx, Kv=cfg.domain.Kv)


def build_potential(cfg: RunConfig, domain: DomainSpec) -> PotentialSpec:
    return PotentialSpec.create(domain, kind=cfg.potential.kind, width=cfg.potential.width)


def build_alpha(cfg: RunConfig, domain: DomainSpec) -> ControlShape:
    a = cfg.alpha
    return ControlShape.create(domain, kind=a.kind, width=a.width, center=a.center,
                               direction=a.direction, amplitude=a.amplitude)


def build_grid(cfg: RunConfig) -> TimeGrid:
    return TimeGrid(T=float(cfg.time.T), Nt=cfg.time.Nt)


def build_profile(name: str, domain: DomainSpec, amplitude: float, width: float = 0.5,
                  seed: int = 0) -> SpectralField:
    """Named analytic initial datum or target snapshot.
    命名的解析初值。

    density-wave is cos(pi x_1/L) H_0, momentum-wave is cos(pi x_1/L) H_{e_1},
    bump is a periodic Gaussian in x times H_0 and random is the seeded
    band-limited verification field scaled to ||y||_Y = amplitude.
    """
    if name not in PROFILES:
        raise ValueError(f"unknown profile {name!r} (expected one of {PROFILES})")
    zero_k = (0,) * domain.d
    e1 = (1,) + (0,) * (domain.d - 1)
    x = domain.grid()
    if name == "zero":
        return SpectralField.zeros(domain)
    if name == "constant":
        return SpectralField.mode(domain, zero_k, value=amplitude)
    if name == "random":
        return random_field(domain, np.random.default_rng(seed), amplitude=amplitude, band_limited=True)
    wave = np.cos(np.pi * x[0] / domain.L)
    if name == "density-wave":
        return SpectralField.from_nodal_slices(domain, {zero_k: amplitude * wave})
    if name == "momentum-wave":
        return SpectralField.from_nodal_slices(domain, {e1: amplitude * wave})
    delta = (x + domain.L) % (2.0 * domain.L) - domain.L
    bump = np.exp(-0.5 * np.sum(delta ** 2, axis=0) / width ** 2)
    return SpectralField.from_nodal_slices(domain, {zero_k: amplitude * bump})


def build_initial(cfg: RunConfig, domain: DomainSpec) -> SpectralField:
    ini = cfg.initial
    return build_profile(ini.profile, domain, ini.amplitude, ini.width, cfg.seed)


def build_control(cfg: RunConfig, grid: TimeGrid, values: Optional[Sequence[float]] = None) -> ControlSignal:
    """Fixed control: explicit values, else a constant ``control.value``."""
    ctl = cfg.control
    if values is None:
        return ControlSignal.constant(grid.Nt, ctl.value, ctl.u_min, ctl.u_max)
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.Nt,):
        raise ConfigError([("control.file", f"expected {grid.Nt} control values, got {values.size}")])
    return ControlSignal(values, ctl.u_min, ctl.u_max)
