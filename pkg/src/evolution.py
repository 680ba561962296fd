"""Time integration of the controlled perturbation equation.
受控扰动方程的时间推进。

Two marchers share one IMEX kernel: the Ornstein–Uhlenbeck diagonal -|k| is
implicit, everything else is explicit. ``direct_march`` evaluates the
nonlinear terms at the current state; ``picard_solve`` iterates the map
z -> y_z where y_z solves the linear equation with frozen source.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from .operators import ControlShape, KineticOperators, PotentialSpec, transport
from .spectral import DomainSpec, SpectralField, stacked_norms, total_degree

logger = logging.getLogger(__name__)

SCHEMES = ("imex-euler", "imex-midpoint")
BLOWUP_FACTOR = 1e6


class StabilityWarning(UserWarning):
    """Time step exceeds the explicit transport stability heuristic."""


class SolverBlowUpError(RuntimeError):
    """Raised when the state norm leaves the blow-up guard.
    状态范数超出爆破保护阈值时抛出。
    """

    def __init__(self, step: int, norm: float, threshold: float):
        self.step = step
        self.norm = norm
        self.threshold = threshold
        super().__init__(
            f"solver blow-up at step {step}: ||y||_Y = {norm:.3e} exceeds {threshold:.3e}"
        )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_n = n dt on [0, T]."""

    T: float
    Nt: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.Nt < 1:
            raise ValueError(f"Nt must be >= 1, got {self.Nt}")

    @property
    def dt(self) -> float:
        return self.T / self.Nt

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.Nt + 1)

    def cell_starts(self) -> np.ndarray:
        return self.times()[:-1]


class ControlSignal:
    """Piecewise-constant scalar control on the Nt time cells, with box bounds.
    分段常数标量控制及其盒约束。
    """

    def __init__(self, values, u_min=-1.0, u_max=1.0):
        """Initialize a control signal.
        初始化控制信号。

        Args:
            values: Cell values, length Nt (各时间单元上的控制值)
            u_min: Lower bound, scalar or per cell, must be <= 0 (下界)
            u_max: Upper bound, scalar or per cell, must be >= 0 (上界)
        """
        values = np.array(values, dtype=float).reshape(-1)
        if values.size == 0:
            raise ValueError("control needs at least one cell")
        u_min = np.broadcast_to(np.asarray(u_min, dtype=float), values.shape).copy()
        u_max = np.broadcast_to(np.asarray(u_max, dtype=float), values.shape).copy()
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(u_min)) and np.all(np.isfinite(u_max))):
            raise ValueError("control values and bounds must be finite")
        if np.any(u_min > 0) or np.any(u_max < 0):
            raise ValueError("control bounds must satisfy u_min <= 0 <= u_max in every cell")
        bad = np.flatnonzero((values < u_min) | (values > u_max))
        if bad.size:
            raise ValueError(f"control value out of bounds in cell {int(bad[0])}: {values[bad[0]]}")
        for arr in (values, u_min, u_max):
            arr.flags.writeable = False
        self.values = values
        self.u_min = u_min
        self.u_max = u_max

    @classmethod
    def zeros(cls, Nt: int, u_min=-1.0, u_max=1.0) -> "ControlSignal":
        return cls(np.zeros(Nt), u_min, u_max)

    @classmethod
    def constant(cls, Nt: int, value: float, u_min=-1.0, u_max=1.0) -> "ControlSignal":
        return cls(np.full(Nt, float(value)), u_min, u_max)

    def __len__(self) -> int:
        return self.values.size

    def project(self, values) -> "ControlSignal":
        """Clip arbitrary cell values into the box and return a new signal."""
        return ControlSignal(np.clip(values, self.u_min, self.u_max), self.u_min, self.u_max)

    def with_values(self, values) -> "ControlSignal":
        return ControlSignal(values, self.u_min, self.u_max)

    def l2_norm(self, dt: float) -> float:
        """||u||_{L^2(0,T)} for piecewise-constant cells."""
        return float(np.sqrt(dt * np.sum(self.values ** 2)))

    @property
    def linf_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def bound_linf(self) -> float:
        """max(||u_min||_inf, ||u_max||_inf)."""
        return float(max(np.max(np.abs(self.u_min)), np.max(np.abs(self.u_max))))


def triple_norm_of(states: np.ndarray, domain: DomainSpec, dt: float) -> float:
    """Left-rectangle L^2(0,T;V_v) norm plus max-over-nodes L^inf(0,T;Y) norm."""
    v_norms = stacked_norms(states[:-1], domain, "Vv")
    y_norms = stacked_norms(states, domain, "Y")
    return float(np.sqrt(dt * np.sum(v_norms ** 2)) + np.max(y_norms))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Nt+1 states on a TimeGrid with their norm histories.
    时间网格上的状态序列及范数历史。
    """

    states: np.ndarray
    domain: DomainSpec
    grid: TimeGrid
    control: Optional[np.ndarray] = None
    scheme: str = "imex-euler"
    stability_ratio: Optional[float] = None
    normY_history: np.ndarray = field(init=False)
    normVv_history: np.ndarray = field(init=False)

    def __post_init__(self):
        states = np.array(self.states, dtype=complex)
        expected = (self.grid.Nt + 1,) + self.domain.shape
        if states.shape != expected:
            raise ValueError(f"trajectory states must have shape {expected}, got {states.shape}")
        states.flags.writeable = False
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "normY_history", stacked_norms(states, self.domain, "Y"))
        object.__setattr__(self, "normVv_history", stacked_norms(states, self.domain, "Vv"))
        if self.control is not None:
            control = np.array(self.control, dtype=float)
            control.flags.writeable = False
            object.__setattr__(self, "control", control)

    @classmethod
    def constant(cls, y: SpectralField, grid: TimeGrid) -> "Trajectory":
        states = np.broadcast_to(y.coeffs, (grid.Nt + 1,) + y.domain.shape)
        return cls(states, y.domain, grid)

    def __len__(self) -> int:
        return self.states.shape[0]

    def state(self, n: int) -> SpectralField:
        return SpectralField(self.states[n], self.domain)

    @property
    def final(self) -> SpectralField:
        return self.state(-1)

    @property
    def triple_norm(self) -> float:
        return triple_norm_of(self.states, self.domain, self.grid.dt)

    @property
    def mass_mode(self) -> np.ndarray:
        """Coefficient (j=0, k=0) at every node."""
        return self.states[(slice(None),) + (0,) * (2 * self.domain.d)]

    @property
    def momentum(self) -> np.ndarray:
        """Coefficient (j=0, k=e_1) at every node."""
        index = (slice(None),) + (0,) * self.domain.d + (1,) + (0,) * (self.domain.d - 1)
        return self.states[index]


@dataclass
class FeasibilityReport:
    """Smallness thresholds of the existence theory, evaluated with estimated constants.
    用估计常数评估的存在性小性条件。
    """

    c_hat: float
    n_norm: float
    U_norm_L2: float
    kappa: float
    data_size: float
    data_threshold: float
    contraction_lhs: float
    kappa_uncontrolled: float
    mu_uncontrolled: float
    label: str = "empirical"

    @property
    def data_small(self) -> bool:
        return self.data_size <= self.data_threshold

    @property
    def contraction_ok(self) -> bool:
        return self.contraction_lhs < 0.75

    @property
    def certified(self) -> bool:
        return self.data_small and self.contraction_ok

    def to_dict(self) -> dict:
        return {
            "c_hat": self.c_hat,
            "n_norm": self.n_norm,
            "U_norm_L2": self.U_norm_L2,
            "kappa": self.kappa,
            "data_size": self.data_size,
            "data_threshold": self.data_threshold,
            "contraction_lhs": self.contraction_lhs,
            "data_small": self.data_small,
            "contraction_ok": self.contraction_ok,
            "certified": self.certified,
            "kappa_uncontrolled": self.kappa_uncontrolled,
            "mu_uncontrolled": self.mu_uncontrolled,
            "label": self.label,
        }


def existence_kappa(c_hat: float, U_norm_L2: float, d: int) -> float:
    """kappa = min(1/(C(4 sqrt(d)||U|| + 1)), 1/(16 sqrt(d)||U|| C))."""
    sd = math.sqrt(d)
    return min(1.0 / (c_hat * (4.0 * sd * U_norm_L2 + 1.0)), 1.0 / (16.0 * sd * U_norm_L2 * c_hat))


def existence_feasibility(
    y0: SpectralField,
    u: ControlSignal,
    grid: TimeGrid,
    U: PotentialSpec,
    alpha: ControlShape,
    c_hat: float,
    n_norm: float,
) -> FeasibilityReport:
    """Evaluate the existence smallness conditions with the given constants.
    用给定常数评估存在性定理的小性条件。

    Controlled problem:
        ||y0||_Y + ||B u||_{L^2(Y)} + 0.5 ||N||^2 ||u||^2 <= kappa / (2 C)
        C ||u||_{L^2} ||N|| < 3/4
    with kappa = min(1/(C(4 sqrt(d)||U|| + 1)), 1/(16 sqrt(d)||U|| C)).
    """
    d = y0.domain.d
    u_norm = control_l2(u, grid)
    b_norm = float(stacked_norms(KineticOperators(U, alpha).B[None], y0.domain, "Y")[0])
    U2 = U.norm_L2
    sd = math.sqrt(d)
    kappa = existence_kappa(c_hat, U2, d)
    y0_norm = float(stacked_norms(y0.coeffs[None], y0.domain, "Y")[0])
    data_size = y0_norm + b_norm * u_norm + 0.5 * n_norm ** 2 * u_norm ** 2
    return FeasibilityReport(
        c_hat=c_hat,
        n_norm=n_norm,
        U_norm_L2=U2,
        kappa=kappa,
        data_size=data_size,
        data_threshold=kappa / (2.0 * c_hat),
        contraction_lhs=c_hat * u_norm * n_norm,
        kappa_uncontrolled=1.0 / (8.0 * sd * U2 * c_hat),
        mu_uncontrolled=3.0 / (32.0 * sd * U2 * c_hat ** 2),
    )


def control_l2(u: Optional[ControlSignal], grid: TimeGrid) -> float:
    return 0.0 if u is None else u.l2_norm(grid.dt)


def source_dual_l2(g: np.ndarray, domain: DomainSpec, dt: float) -> float:
    """||g||_{L^2(0,T;V_v')} by left rectangles."""
    return float(np.sqrt(dt * np.sum(stacked_norms(g[:-1], domain, "Vv'") ** 2)))


def cfl_number(domain: DomainSpec, dt: float) -> float:
    """dt * (pi Nx / 2L) * sqrt(Kv)."""
    return dt * (math.pi * domain.Nx / (2.0 * domain.L)) * math.sqrt(domain.Kv)


def _check_cfl(domain: DomainSpec, dt: float):
    cfl = cfl_number(domain, dt)
    if cfl > 1.0:
        message = f"dt={dt:.3g} gives transport CFL number {cfl:.3f} > 1"
        logger.warning(message)
        warnings.warn(message, StabilityWarning, stacklevel=3)


def _check_scheme(scheme: str):
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r} (expected one of {SCHEMES})")


ExplicitFn = Callable[[int, np.ndarray, float], np.ndarray]


def _imex_advance(c: np.ndarray, n: int, dt: float, degree: np.ndarray,
                  explicit: ExplicitFn, scheme: str) -> np.ndarray:
    if scheme == "imex-euler":
        return (c + dt * explicit(n, c, 0.0)) / (1.0 + dt * degree)
    half = 0.5 * dt * degree
    c_mid = (c + 0.5 * dt * explicit(n, c, 0.0)) / (1.0 + half)
    return ((1.0 - half) * c + dt * explicit(n, c_mid, 0.5)) / (1.0 + half)


def _march(c0: np.ndarray, domain: DomainSpec, grid: TimeGrid, explicit: ExplicitFn,
           scheme: str, blowup_factor: float) -> np.ndarray:
    _check_scheme(scheme)
    _check_cfl(domain, grid.dt)
    degree = total_degree(domain)
    dt = grid.dt
    states = np.empty((grid.Nt + 1,) + domain.shape, dtype=complex)
    states[0] = c0
    threshold = blowup_factor * max(float(stacked_norms(c0[None], domain, "Y")[0]), 1.0)
    for n in range(grid.Nt):
        c = _imex_advance(states[n], n, dt, degree, explicit, scheme)
        norm = float(np.sqrt(domain.volume * np.sum(c.real ** 2 + c.imag ** 2)))
        if not np.isfinite(norm) or norm > threshold:
            logger.warning("blow-up guard tripped at step %d (norm %.3e)", n + 1, norm)
            raise SolverBlowUpError(n + 1, norm, threshold)
        states[n + 1] = c
    return states


def _source_stack(g, domain: DomainSpec, grid: TimeGrid) -> np.ndarray:
    shape = (grid.Nt + 1,) + domain.shape
    if g is None:
        return np.zeros(shape, dtype=complex)
    if isinstance(g, np.ndarray):
        stack = np.asarray(g, dtype=complex)
    else:
        stack = np.stack([gi.coeffs if isinstance(gi, SpectralField) else np.asarray(gi) for gi in g])
    if stack.shape != shape:
        raise ValueError(f"source must be given at all {grid.Nt + 1} nodes with shape {domain.shape}")
    return stack


def linear_step(
    y: SpectralField,
    g: SpectralField,
    dt: float,
    U: Optional[PotentialSpec] = None,
    scheme: str = "imex-euler",
    g_next: Optional[SpectralField] = None,
) -> SpectralField:
    """One IMEX step of dy/dt = (A + D) y + g.
    线性方程的一个 IMEX 时间步。

    Args:
        y: State at t_n (t_n 时刻状态)
        g: Source at t_n (t_n 时刻源项)
        dt: Step size > 0 (时间步长)
        U: Potential for D; None switches D off (势函数，None 时关闭 D)
        scheme: "imex-euler" or "imex-midpoint" (时间格式)
        g_next: Source at t_{n+1}, midpoint scheme only (下一时刻源项)
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    _check_scheme(scheme)
    _check_cfl(y.domain, dt)
    ops = KineticOperators(U) if U is not None else None
    g0 = g.coeffs
    g1 = g_next.coeffs if g_next is not None else g0

    def explicit(n, c, stage):
        out = ops.transport(c) + ops.D(c) if ops is not None else transport(c, y.domain)
        return out + ((1.0 - stage) * g0 + stage * g1)

    c = _imex_advance(y.coeffs, 0, dt, total_degree(y.domain), explicit, scheme)
    return SpectralField(c, y.domain)


def solve_linear(
    y0: SpectralField,
    g,
    grid: TimeGrid,
    U: Optional[PotentialSpec] = None,
    scheme: str = "imex-euler",
    blowup_factor: float = BLOWUP_FACTOR,
) -> Trajectory:
    """March dy/dt = (A + D) y + g over the grid.
    在时间网格上推进线性方程。

    ``g`` is None, an array of shape (Nt+1,)+domain.shape, or a sequence of
    Nt+1 fields. The returned trajectory carries the stability ratio
    |||y||| / (||y0||_Y + ||g||_{L^2(V_v')}).
    """
    domain = y0.domain
    source = _source_stack(g, domain, grid)
    ops = KineticOperators(U) if U is not None else None

    def explicit(n, c, stage):
        out = ops.transport(c) + ops.D(c) if ops is not None else transport(c, domain)
        src = source[n] if stage == 0.0 else 0.5 * (source[n] + source[n + 1])
        return out + src

    states = _march(y0.coeffs, domain, grid, explicit, scheme, blowup_factor)
    denom = float(stacked_norms(y0.coeffs[None], domain, "Y")[0]) + source_dual_l2(source, domain, grid.dt)
    ratio = None
    if denom > 0:
        ratio = triple_norm_of(states, domain, grid.dt) / denom
        logger.debug("linear solve stability ratio %.4f", ratio)
    return Trajectory(states, domain, grid, scheme=scheme, stability_ratio=ratio)


def _control_values(u: Optional[ControlSignal], grid: TimeGrid) -> np.ndarray:
    if u is None:
        return np.zeros(grid.Nt)
    if len(u) != grid.Nt:
        raise ValueError(f"control has {len(u)} cells but the grid has Nt={grid.Nt}")
    return np.asarray(u.values)


def direct_march(
    y0: SpectralField,
    u: Optional[ControlSignal],
    grid: TimeGrid,
    U: PotentialSpec,
    alpha: Optional[ControlShape] = None,
    scheme: str = "imex-euler",
    nonlinear: bool = True,
    control: bool = True,
    blowup_factor: float = BLOWUP_FACTOR,
) -> Trajectory:
    """Single nonlinear IMEX march with h1, h2 and N evaluated at the current state.
    单次非线性 IMEX 推进。
    """
    ops = KineticOperators(U, alpha)
    values = _control_values(u, grid)

    def explicit(n, c, stage):
        return ops.explicit(c, values[n], nonlinear=nonlinear, control=control)

    states = _march(y0.coeffs, y0.domain, grid, explicit, scheme, blowup_factor)
    return Trajectory(states, y0.domain, grid, control=values, scheme=scheme)


@dataclass
class PicardReport:
    """Contraction diagnostics of the fixed-point iteration.
    不动点迭代的收缩诊断。
    """

    iterates: int
    residuals: List[float]
    observed_rate: float
    converged: bool
    tol: float
    feasibility: Optional[FeasibilityReport] = None

    @property
    def rates(self) -> List[float]:
        return [b / a for a, b in zip(self.residuals, self.residuals[1:]) if a > 0]

    def to_dict(self) -> dict:
        return {
            "iterates": self.iterates,
            "residuals": list(self.residuals),
            "rates": self.rates,
            "observed_rate": self.observed_rate,
            "converged": self.converged,
            "tol": self.tol,
            "feasibility": self.feasibility.to_dict() if self.feasibility else None,
        }


def picard_solve(
    y0: SpectralField,
    u: Optional[ControlSignal],
    grid: TimeGrid,
    U: PotentialSpec,
    alpha: Optional[ControlShape] = None,
    tol: float = 1e-9,
    max_iter: int = 50,
    nonlinear: bool = True,
    control: bool = True,
    scheme: str = "imex-euler",
    constants: Optional[dict] = None,
    blowup_factor: float = BLOWUP_FACTOR,
) -> "tuple[Trajectory, PicardReport]":
    """Fixed-point iteration z -> y_z starting from the zero trajectory.
    从零轨迹出发的 Picard 不动点迭代。

    y_z solves dy/dt = (A + D) y - h1(z) - h2(z) + u N z + B u. The loop stops
    when |||y_z - z||| < tol. ``constants`` may carry ``c_hat`` and ``n_norm``
    for the feasibility evaluation.

    Returns:
        (trajectory, report); on non-convergence the best iterate is returned
        and ``report.converged`` is False.
    """
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    domain = y0.domain
    ops = KineticOperators(U, alpha)
    values = _control_values(u, grid)
    node_values = np.append(values, values[-1])

    def frozen_source(z: np.ndarray) -> np.ndarray:
        g = np.zeros_like(z)
        for n in range(grid.Nt + 1):
            if nonlinear:
                g[n] -= ops.h1(z[n]) + ops.h2(z[n])
            if control and node_values[n] != 0.0:
                g[n] += node_values[n] * (ops.N(z[n]) + ops.B)
        return g

    z = np.zeros((grid.Nt + 1,) + domain.shape, dtype=complex)
    residuals: List[float] = []
    best, best_residual = None, np.inf
    converged = False
    for m in range(max_iter):
        source = frozen_source(z)

        def explicit(n, c, stage, source=source):
            src = source[n] if stage == 0.0 else 0.5 * (source[n] + source[n + 1])
            return ops.transport(c) + ops.D(c) + src

        y = _march(y0.coeffs, domain, grid, explicit, scheme, blowup_factor)
        residual = triple_norm_of(y - z, domain, grid.dt)
        residuals.append(residual)
        logger.info("picard iterate %d: residual %.3e", m + 1, residual)
        if residual < best_residual:
            best, best_residual = y, residual
        z = y
        if residual < tol:
            converged = True
            break

    rates = [b / a for a, b in zip(residuals, residuals[1:]) if a > 0]
    observed_rate = max(rates) if rates else 0.0
    if not converged:
        logger.warning("picard did not converge in %d iterates (best residual %.3e)", max_iter, best_residual)

    feasibility = None
    if constants is not None:
        signal = u if u is not None else ControlSignal.zeros(grid.Nt)
        feasibility = existence_feasibility(
            y0, signal, grid, U, ops.alpha, constants["c_hat"], constants["n_norm"]
        )

    report = PicardReport(
        iterates=len(residuals),
        residuals=residuals,
        observed_rate=observed_rate,
        converged=converged,
        tol=tol,
        feasibility=feasibility,
    )
    return Trajectory(best, domain, grid, control=values, scheme=scheme), report
