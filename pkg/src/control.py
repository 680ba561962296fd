"""Tracking-type optimal control over a box-constrained scalar control.
盒约束标量控制下的跟踪型最优控制。

    J(u) = 1/2 int ||y(u) - y_d||^2_{V_v} dt + beta/2 int u^2 dt

Both integrals use left-endpoint rectangles on the time grid. The gradient is
the exact gradient of this discrete cost, obtained by a backward sweep through
the IMEX-Euler recursion.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .evolution import (
    ControlSignal,
    SolverBlowUpError,
    TimeGrid,
    Trajectory,
    direct_march,
)
from .operators import ControlShape, KineticOperators, PotentialSpec
from .spectral import SpectralField, stacked_norms, total_degree

logger = logging.getLogger(__name__)

__all__ = [
    "ControlSignal",
    "CostBreakdown",
    "OptimizerOptions",
    "OptimizationResult",
    "TrackingProblem",
    "UniquenessCertificate",
    "evaluate_cost",
    "gradient",
    "projected_gradient_descent",
    "uniqueness_certificate",
]


@dataclass(frozen=True)
class CostBreakdown:
    """Tracking and penalty parts of the discrete cost.
    离散代价的跟踪项与惩罚项。
    """

    tracking: float
    penalty: float
    total: float
    blew_up: bool = False

    @classmethod
    def infinite(cls) -> "CostBreakdown":
        return cls(math.inf, math.inf, math.inf, blew_up=True)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tracking": self.tracking,
            "penalty": self.penalty,
            "total": self.total,
            "blew_up": self.blew_up,
        }


@dataclass
class OptimizerOptions:
    max_iter: int = 200
    tol_factor: float = 1e-6
    initial_step: float = 1.0
    max_step: float = 1e8
    armijo_c: float = 1e-4
    max_halvings: int = 40
    step_growth: float = 2.0

    def __post_init__(self):
        if self.max_iter < 0:
            raise ValueError(f"max_iter must be >= 0, got {self.max_iter}")
        if not self.initial_step > 0:
            raise ValueError(f"initial_step must be positive, got {self.initial_step}")
        if not 0 < self.armijo_c < 1:
            raise ValueError(f"armijo_c must lie in (0, 1), got {self.armijo_c}")


@dataclass
class OptimizationResult:
    """Outcome of projected gradient descent.
    投影梯度下降的结果。
    """

    control: ControlSignal
    cost: CostBreakdown
    log: List[Dict[str, float]]
    converged: bool
    stalled: bool

    @property
    def iterations(self) -> int:
        return max(len(self.log) - 1, 0)


class TrackingProblem:
    """One instance of the tracking problem: data, target, weights and operators.
    跟踪问题的一个实例。
    """

    def __init__(
        self,
        y0: SpectralField,
        y_d: Trajectory,
        beta: float,
        U: PotentialSpec,
        alpha: ControlShape,
        nonlinear: bool = True,
        control: bool = True,
    ):
        """Initialize the problem.
        初始化问题。

        Args:
            y0: Initial datum (初始值)
            y_d: Target trajectory on the optimization grid (目标轨迹)
            beta: Control cost weight, > 0 (控制代价权重)
            U: Communication potential (通讯势函数)
            alpha: Control profile (控制分布)
            nonlinear: Include h1 and h2 in the state equation (是否包含非线性项)
            control: Include N and B; off means the state ignores u (是否包含控制项)
        """
        if not beta > 0:
            raise ValueError(f"beta must be positive, got {beta}")
        if y_d.domain != y0.domain:
            raise ValueError("target trajectory and initial datum live on different domains")
        self.y0 = y0
        self.y_d = y_d
        self.grid: TimeGrid = y_d.grid
        self.beta = float(beta)
        self.U = U
        self.alpha = alpha
        self.nonlinear = nonlinear
        self.control = control
        self.ops = KineticOperators(U, alpha)
        self._weight = y0.domain.volume * (1.0 + total_degree(y0.domain))

    def forward(self, u: ControlSignal) -> Trajectory:
        return direct_march(
            self.y0, u, self.grid, self.U, self.alpha,
            nonlinear=self.nonlinear, control=self.control,
        )

    def cost_of(self, u: ControlSignal, trajectory: Trajectory) -> CostBreakdown:
        """Quadrature of both integrals for a stored forward trajectory."""
        dt = self.grid.dt
        diff = trajectory.states[:-1] - self.y_d.states[:-1]
        tracking = 0.5 * dt * float(np.sum(stacked_norms(diff, self.y0.domain, "Vv") ** 2))
        penalty = 0.5 * self.beta * dt * float(np.sum(u.values ** 2))
        return CostBreakdown(tracking, penalty, tracking + penalty)

    def evaluate(self, u: ControlSignal):
        """Return (CostBreakdown, trajectory or None on blow-up)."""
        self._check_length(u)
        try:
            trajectory = self.forward(u)
        except SolverBlowUpError as e:
            logger.info("cost evaluation hit blow-up: %s", e)
            return CostBreakdown.infinite(), None
        return self.cost_of(u, trajectory), trajectory

    def gradient(self, u: ControlSignal, forward: Optional[Trajectory] = None) -> np.ndarray:
        """Exact gradient of the discrete cost with respect to the Nt cell values.
        离散代价关于各时间单元控制值的精确梯度。

        Raises:
            ValueError: If ``forward`` was not produced by this control (前向状态不匹配)
        """
        self._check_length(u)
        if forward is None:
            forward = self.forward(u)
        elif forward.control is None or not np.array_equal(forward.control, u.values):
            raise ValueError("forward states do not match the control; re-run the forward march")

        dt = self.grid.dt
        grad = self.beta * dt * np.asarray(u.values, dtype=float)
        if not self.control:
            return grad

        ops = self.ops
        implicit = 1.0 / (1.0 + dt * total_degree(self.y0.domain))
        states = forward.states
        target = self.y_d.states
        p = np.zeros(self.y0.domain.shape, dtype=complex)
        for n in range(self.grid.Nt - 1, -1, -1):
            q = implicit * p
            c = states[n]
            grad[n] += dt * float(np.real(np.vdot(ops.control_derivative(c), q)))
            if n == 0:
                break
            p = (
                dt * self._weight * (c - target[n])
                + q
                + dt * ops.explicit_adjoint(c, u.values[n], q, nonlinear=self.nonlinear, control=self.control)
            )
        return grad

    def _check_length(self, u: ControlSignal):
        if len(u) != self.grid.Nt:
            raise ValueError(f"control has {len(u)} cells but the target grid has Nt={self.grid.Nt}")

    def stationarity(self, u: ControlSignal, grad: np.ndarray) -> float:
        """||u - clip(u - grad)||."""
        projected = np.clip(u.values - grad, u.u_min, u.u_max)
        return float(np.linalg.norm(u.values - projected))

    def solve(self, u0: ControlSignal, opts: Optional[OptimizerOptions] = None) -> OptimizationResult:
        """Projected gradient descent with Armijo backtracking.
        带 Armijo 回溯的投影梯度下降。
        """
        opts = opts or OptimizerOptions()
        u = u0
        cost, trajectory = self.evaluate(u)
        if cost.blew_up:
            raise SolverBlowUpError(0, math.inf, math.inf)
        step = opts.initial_step
        log: List[Dict[str, float]] = []
        converged = stalled = False

        for it in range(opts.max_iter + 1):
            grad = self.gradient(u, trajectory)
            measure = self.stationarity(u, grad)
            log.append({
                "iter": it,
                "cost": cost.total,
                "tracking": cost.tracking,
                "penalty": cost.penalty,
                "step_size": step,
                "stationarity": measure,
            })
            logger.info("iter %d: J=%.6e stationarity=%.3e step=%.3e", it, cost.total, measure, step)
            if measure < opts.tol_factor * (1.0 + abs(cost.total)):
                converged = True
                break
            if it == opts.max_iter:
                break

            accepted = False
            trial_step = step
            for _ in range(opts.max_halvings):
                candidate = u.project(u.values - trial_step * grad)
                decrease = float(np.dot(grad, candidate.values - u.values))
                if decrease >= 0:
                    trial_step *= 0.5
                    continue
                trial_cost, trial_trajectory = self.evaluate(candidate)
                if not trial_cost.blew_up and trial_cost.total < cost.total \
                        and trial_cost.total <= cost.total + opts.armijo_c * decrease:
                    accepted = True
                    break
                trial_step *= 0.5
            if not accepted:
                stalled = True
                logger.warning("line search failed after %d halvings at iter %d", opts.max_halvings, it)
                break
            u, cost, trajectory = candidate, trial_cost, trial_trajectory
            step = min(trial_step * opts.step_growth, opts.max_step)

        return OptimizationResult(control=u, cost=cost, log=log, converged=converged, stalled=stalled)


def evaluate_cost(
    u: ControlSignal,
    y0: SpectralField,
    y_d: Trajectory,
    beta: float,
    U: PotentialSpec,
    alpha: ControlShape,
    **flags,
) -> CostBreakdown:
    return TrackingProblem(y0, y_d, beta, U, alpha, **flags).evaluate(u)[0]


def gradient(
    u: ControlSignal,
    y0: SpectralField,
    y_d: Trajectory,
    beta: float,
    U: PotentialSpec,
    alpha: ControlShape,
    forward: Optional[Trajectory] = None,
    **flags,
) -> np.ndarray:
    return TrackingProblem(y0, y_d, beta, U, alpha, **flags).gradient(u, forward)


def projected_gradient_descent(
    u0: ControlSignal,
    y0: SpectralField,
    y_d: Trajectory,
    beta: float,
    U: PotentialSpec,
    alpha: ControlShape,
    opts: Optional[OptimizerOptions] = None,
    **flags,
) -> OptimizationResult:
    return TrackingProblem(y0, y_d, beta, U, alpha, **flags).solve(u0, opts)


@dataclass
class UniquenessCertificate:
    """Left-hand sides and verdicts of the four uniqueness smallness conditions.
    唯一性小性条件的左端值与判定。
    """

    y0_norm: float
    mu: float
    u_inf: float
    lhs_target: float
    lhs_data: float
    conditions: Dict[str, bool] = field(default_factory=dict)
    solution_bound_label: str = "empirical surrogate"

    @property
    def holds(self) -> bool:
        return all(self.conditions.values())

    @property
    def violations(self) -> List[str]:
        return [name for name, ok in self.conditions.items() if not ok]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "y0_norm": self.y0_norm,
            "mu": self.mu,
            "u_inf": self.u_inf,
            "lhs_target": self.lhs_target,
            "lhs_data": self.lhs_data,
            "conditions": dict(self.conditions),
            "holds": self.holds,
            "violations": self.violations,
            "solution_bound_label": self.solution_bound_label,
        }


def uniqueness_certificate(
    u_bounds: ControlSignal,
    y0: SpectralField,
    y_d: Trajectory,
    constants,
) -> UniquenessCertificate:
    """Evaluate the four uniqueness smallness conditions with estimated constants.
    用估计常数评估唯一性的四个小性条件。

    With K = 8 d C^2 ||U||^2 (1 + ||N||) and C_s the solution-bound surrogate:
        ||y0||_Y <= mu = 3 / (32 sqrt(d) ||U|| C^2)
        max(||u_min||_inf, ||u_max||_inf) <= 1
        K (2 ||y_d|| + kappa) C_s <= 1/2
        4 sqrt(d) C^2 ||U|| (1 + ||N||) (||y0||_Y + (2 ||y_d|| + kappa) u_inf ||N||) < 1/2
    where ||y_d|| is the L^2(0,T;V_v) norm of the target.

    Args:
        u_bounds: Any signal carrying the admissible box (携带控制盒约束的信号)
        y0: Initial datum (初始值)
        y_d: Target trajectory (目标轨迹)
        constants: Table with c_hat, n_norm, U_norm_L2, kappa, solution_bound
                   (常数表)
    """
    domain = y0.domain
    d = domain.d
    c_hat = constants.c_hat
    U2 = constants.U_norm_L2
    n_norm = constants.n_norm
    bound = constants.solution_bound
    mu = 3.0 / (32.0 * math.sqrt(d) * U2 * c_hat ** 2)
    y0_norm = float(stacked_norms(y0.coeffs[None], domain, "Y")[0])
    target_norm = float(np.sqrt(y_d.grid.dt * np.sum(y_d.normVv_history[:-1] ** 2)))
    K = 8.0 * d * c_hat ** 2 * U2 ** 2 * (1.0 + n_norm)
    lhs_target = K * (2.0 * target_norm + constants.kappa) * bound
    u_inf = u_bounds.bound_linf
    lhs_data = (
        4.0 * math.sqrt(d) * c_hat ** 2 * U2 * (1.0 + n_norm)
        * (y0_norm + (2.0 * target_norm + constants.kappa) * u_inf * n_norm)
    )
    conditions = {
        "initial_small": y0_norm <= mu,
        "control_bound": u_inf <= 1.0,
        "target_small": lhs_target <= 0.5,
        "data_small": lhs_data < 0.5,
    }
    return UniquenessCertificate(
        y0_norm=y0_norm,
        mu=mu,
        u_inf=u_inf,
        lhs_target=lhs_target,
        lhs_data=lhs_data,
        conditions=conditions,
    )
