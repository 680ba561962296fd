"""Randomized verification of operator identities and estimates.
算子恒等式与估计的随机化数值验证。

Every check draws seeded random fields, evaluates both sides and records the
worst ratio. Identities report |lhs - rhs| / scale; inequalities report
lhs / rhs.
"""

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .evolution import (
    ControlSignal,
    SolverBlowUpError,
    TimeGrid,
    direct_march,
    existence_kappa,
    solve_linear,
    triple_norm_of,
)
from .operators import ControlShape, KineticOperators, PotentialSpec, apply_A, apply_A_adjoint, apply_R, apply_R_inv_sqrt
from .spectral import (
    DomainSpec,
    SpectralField,
    build_basis,
    dealias_mask,
    hermite_degrees,
    inner_Y,
    lower_v,
    make_real,
    moments,
    norm_Vv,
    norm_Y,
    dual_norm_Vv,
    raise_v,
    stacked_norms,
    to_nodal,
    unit_index,
    wavenumbers,
)

logger = logging.getLogger(__name__)

CONSTANTS_VERSION = 1
IDENTITY_TOL = 1e-12
DISSIPATION_TOL = 1e-9
INEQUALITY_TOL = 1e-8


@dataclass
class CheckResult:
    """Outcome of one randomized check.
    一次随机化检验的结果。
    """

    name: str
    kind: str
    samples: int
    worst_ratio: float
    tolerance: float
    median_ratio: float = float("nan")
    worst_lhs: float = float("nan")
    worst_rhs: float = float("nan")

    @property
    def passed(self) -> bool:
        if self.kind == "identity":
            return self.worst_ratio <= self.tolerance
        return self.worst_ratio <= 1.0 + self.tolerance

    def to_dict(self) -> dict:
        data = asdict(self)
        data["passed"] = self.passed
        return data


def random_field(domain: DomainSpec, rng: np.random.Generator, amplitude: float = 1.0,
                 band_limited: bool = False) -> SpectralField:
    """Seeded real random field with decay (1+|j|^2)^-1 (1+|k|)^-1.
    带衰减的随机实值场。

    Args:
        domain: Phase-space truncation (相空间截断)
        rng: numpy Generator (随机数生成器)
        amplitude: Target ||y||_Y (目标范数)
        band_limited: Keep only modes inside the 2/3 band (仅保留去混叠频带)
    """
    j2 = sum(j ** 2 for j in wavenumbers(domain))
    k = sum(hermite_degrees(domain))
    decay = 1.0 / ((1.0 + j2) * (1.0 + k))
    coeffs = (rng.standard_normal(domain.shape) + 1j * rng.standard_normal(domain.shape)) * decay
    if band_limited:
        coeffs = coeffs * dealias_mask(domain)
    coeffs = make_real(coeffs, domain)
    y = SpectralField(coeffs, domain)
    norm = norm_Y(y)
    return y * (amplitude / norm) if norm > 0 else y


class _Tally:
    def __init__(self, name: str, kind: str, tolerance: float):
        self.name = name
        self.kind = kind
        self.tolerance = tolerance
        self.ratios: List[float] = []
        self.worst = (float("nan"), float("nan"))

    def add(self, lhs: float, rhs: float):
        if self.kind == "identity":
            scale = rhs if rhs > 0 else 1.0
            ratio = abs(lhs) / scale
        else:
            if rhs <= 0:
                if lhs > 0:
                    ratio = math.inf
                else:
                    return
            else:
                ratio = lhs / rhs
        if not self.ratios or ratio > max(self.ratios):
            self.worst = (lhs, rhs)
        self.ratios.append(ratio)

    def result(self) -> CheckResult:
        ratios = np.asarray(self.ratios) if self.ratios else np.zeros(1)
        return CheckResult(
            name=self.name,
            kind=self.kind,
            samples=len(self.ratios),
            worst_ratio=float(np.max(ratios)),
            tolerance=self.tolerance,
            median_ratio=float(np.median(ratios)),
            worst_lhs=float(self.worst[0]),
            worst_rhs=float(self.worst[1]),
        )


def _grad_v_sq(y: SpectralField) -> float:
    return sum(norm_Y(SpectralField(lower_v(y.coeffs, y.domain, i), y.domain)) ** 2 for i in range(y.domain.d))


def _mu_divergence_residual(y: SpectralField, basis) -> float:
    """Compare the ladder form of (d/dv_i - v_i) y with quadrature of mu^-1 d/dv_i(mu y)."""
    domain = y.domain
    worst = 0.0
    for i in range(domain.d):
        axis = domain.d + i
        c = np.moveaxis(y.coeffs, axis, -1)
        values = c @ basis.values
        derivs = c @ basis.derivatives
        projected = ((derivs - basis.nodes * values) * basis.weights) @ basis.values.T
        ladder = np.moveaxis(-raise_v(y.coeffs, domain, i), axis, -1)
        worst = max(worst, float(np.max(np.abs(projected - ladder), initial=0.0)))
    return worst


def check_identity_suite(
    domain: DomainSpec,
    U: PotentialSpec,
    alpha: ControlShape,
    n_samples: int = 100,
    seed: int = 0,
) -> List[CheckResult]:
    """Evaluate the exact identities of the discretization on random fields.
    在随机场上检验离散格式中的恒等式。
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    ops = KineticOperators(U, alpha)
    basis = build_basis(domain)
    tallies = {
        "R_identity": _Tally("R_identity", "identity", IDENTITY_TOL),
        "Vv_diagonal": _Tally("Vv_diagonal", "identity", IDENTITY_TOL),
        "dissipation": _Tally("dissipation", "identity", DISSIPATION_TOL),
        "A_adjoint": _Tally("A_adjoint", "identity", IDENTITY_TOL),
        "R_inv_sqrt_isometry": _Tally("R_inv_sqrt_isometry", "identity", IDENTITY_TOL),
        "N_of_one_equals_B": _Tally("N_of_one_equals_B", "identity", IDENTITY_TOL),
        "mu_divergence_ladder": _Tally("mu_divergence_ladder", "identity", 1e-10),
        "h2_N_consistency": _Tally("h2_N_consistency", "identity", IDENTITY_TOL),
        "mass_mode_annihilation": _Tally("mass_mode_annihilation", "identity", IDENTITY_TOL),
        "momentum_balance": _Tally("momentum_balance", "identity", 1e-10),
    }

    one = SpectralField.mode(domain, (0,) * domain.d)
    B = SpectralField(ops.B, domain)
    n_one = SpectralField(ops.N(one.coeffs), domain)
    tallies["N_of_one_equals_B"].add(norm_Y(n_one - B), max(norm_Y(B), 1.0))
    k0 = (0,) * (2 * domain.d)

    for _ in range(n_samples):
        y = random_field(domain, rng)
        z = random_field(domain, rng)

        vv = norm_Vv(y) ** 2
        tallies["R_identity"].add(inner_Y(apply_R(y), y) - vv, vv)
        tallies["Vv_diagonal"].add(vv - norm_Y(y) ** 2 - _grad_v_sq(y), vv)

        grad_sq = _grad_v_sq(z)
        tallies["dissipation"].add(inner_Y(apply_A(z), z) + grad_sq, grad_sq)

        Ay = apply_A(y)
        tallies["A_adjoint"].add(inner_Y(Ay, z) - inner_Y(y, apply_A_adjoint(z)), norm_Y(Ay) * norm_Y(z))

        ny = norm_Y(y)
        tallies["R_inv_sqrt_isometry"].add(norm_Vv(apply_R_inv_sqrt(y)) - ny, ny)

        tallies["mu_divergence_ladder"].add(_mu_divergence_residual(y, basis), float(np.max(np.abs(y.coeffs))))

        m = np.stack([U.symbol * y.coeffs[unit_index(domain, i)] for i in range(domain.d)])
        h2 = ops.h2(y.coeffs)
        n_m = KineticOperators(U, ControlShape(domain=domain, coeffs=m)).N(y.coeffs)
        scale = float(np.max(np.abs(h2), initial=0.0))
        tallies["h2_N_consistency"].add(float(np.max(np.abs(h2 - n_m), initial=0.0)), scale if scale > 0 else 1.0)

        u = float(rng.uniform(-1.0, 1.0))
        rhs = ops.rhs(y.coeffs, u)
        rhs_scale = float(np.max(np.abs(rhs)))
        tallies["mass_mode_annihilation"].add(abs(rhs[k0]), rhs_scale)

        free = ops.rhs(y.coeffs, 0.0)
        free_scale = float(np.max(np.abs(free)))
        for i in range(domain.d):
            index = (0,) * domain.d + tuple(np.eye(domain.d, dtype=int)[i])
            tallies["momentum_balance"].add(abs(free[index]), free_scale)

    results = [t.result() for t in tallies.values()]
    for r in results:
        logger.info("%s: worst %.3e (%s)", r.name, r.worst_ratio, "pass" if r.passed else "FAIL")
    return results


def _rho_norm(y: SpectralField) -> float:
    mf = moments(y)
    return float(np.sqrt(y.domain.h ** y.domain.d * np.sum(mf.rho ** 2)))


def _rho_v_norm(y: SpectralField) -> float:
    mf = moments(y)
    return float(np.sqrt(y.domain.h ** y.domain.d * np.sum(mf.rho_v ** 2)))


def _random_trajectory(domain: DomainSpec, grid: TimeGrid, rng: np.random.Generator) -> np.ndarray:
    """Synthetic trajectory: smooth-in-time blend of two random fields."""
    a = random_field(domain, rng).coeffs
    b = random_field(domain, rng).coeffs
    s = (grid.times() / grid.T).reshape((-1,) + (1,) * (2 * domain.d))
    return (1.0 - s) * a + s * b


def check_inequality_suite(
    domain: DomainSpec,
    U: PotentialSpec,
    alpha: ControlShape,
    n_samples: int = 200,
    seed: int = 1,
    tol: float = INEQUALITY_TOL,
    n_trajectories: int = 10,
) -> List[CheckResult]:
    """Check the operator bounds and Lipschitz estimates on random samples.
    在随机样本上检验算子界与 Lipschitz 估计。

    The D bound uses five times ``n_samples``. Time-integrated forms use
    ``n_trajectories`` synthetic pairs on a short grid, in the split
    L^inf(0,T;Y) / L^2(0,T;V_v) form and in the triple-norm form.

    ``convolution_sup_bound`` measures U*rho after the 2/3 truncation used by
    the nonlinearity; ``convolution_sup_bound_unmasked`` measures the full
    grid convolution, which is the quantity the Cauchy-Schwarz bound covers.
    ``N_bound`` compares fresh samples with the ``estimate_n_norm`` value.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    rng = np.random.default_rng(seed)
    ops = KineticOperators(U, alpha)
    U2 = U.norm_L2
    sd = math.sqrt(domain.d)
    names = [
        "D_bound", "density_moment_bound", "momentum_moment_bound", "convolution_sup_bound",
        "convolution_sup_bound_unmasked", "h1_lipschitz", "h2_lipschitz", "duality", "N_bound",
        "h1_lipschitz_split", "h2_lipschitz_split", "h1_lipschitz_time", "h2_lipschitz_time",
    ]
    tallies = {name: _Tally(name, "inequality", tol) for name in names}
    n_norm, _ = estimate_n_norm(domain, U, alpha, rng)

    for _ in range(5 * n_samples):
        y = random_field(domain, rng, amplitude=float(rng.uniform(0.1, 10.0)))
        tallies["D_bound"].add(norm_Y(SpectralField(ops.D(y.coeffs), domain)), norm_Y(y))

    for _ in range(n_samples):
        y = random_field(domain, rng, amplitude=float(rng.uniform(0.1, 2.0)))
        z = random_field(domain, rng, amplitude=float(rng.uniform(0.1, 2.0)))
        ny, nz = norm_Y(y), norm_Y(z)
        e = y - z
        ne = norm_Y(e)

        tallies["density_moment_bound"].add(_rho_norm(y), ny)
        tallies["momentum_moment_bound"].add(_rho_v_norm(y), sd * ny)
        conv = U.symbol * y.coeffs[(slice(None),) * domain.d + (0,) * domain.d]
        sup = float(np.max(np.abs(to_nodal(conv * dealias_mask(domain, full=False), domain))))
        tallies["convolution_sup_bound"].add(sup, U2 * ny)
        raw = float(np.max(np.abs(to_nodal(conv, domain))))
        tallies["convolution_sup_bound_unmasked"].add(raw, U2 * ny)

        dh1 = SpectralField(ops.h1(y.coeffs) - ops.h1(z.coeffs), domain)
        tallies["h1_lipschitz"].add(dual_norm_Vv(dh1), U2 * (ny * norm_Vv(e) + ne * norm_Vv(z)))
        dh2 = SpectralField(ops.h2(y.coeffs) - ops.h2(z.coeffs), domain)
        tallies["h2_lipschitz"].add(dual_norm_Vv(dh2), sd * U2 * (ny * ne + ne * nz))

        tallies["duality"].add(abs(inner_Y(y, z)), dual_norm_Vv(y) * norm_Vv(z))
        tallies["N_bound"].add(dual_norm_Vv(SpectralField(ops.N(y.coeffs), domain)), n_norm * ny)

    grid = TimeGrid(T=1.0, Nt=8)
    for _ in range(n_trajectories):
        ys = _random_trajectory(domain, grid, rng)
        zs = _random_trajectory(domain, grid, rng)
        dh1 = np.stack([ops.h1(a) - ops.h1(b) for a, b in zip(ys, zs)])
        dh2 = np.stack([ops.h2(a) - ops.h2(b) for a, b in zip(ys, zs)])
        lhs1 = float(np.sqrt(grid.dt * np.sum(stacked_norms(dh1[:-1], domain, "Vv'") ** 2)))
        lhs2 = float(np.sqrt(grid.dt * np.sum(stacked_norms(dh2[:-1], domain, "Vv'") ** 2)))
        ty = triple_norm_of(ys, domain, grid.dt)
        tz = triple_norm_of(zs, domain, grid.dt)
        te = triple_norm_of(ys - zs, domain, grid.dt)
        tallies["h1_lipschitz_time"].add(lhs1, U2 * (ty + tz) * te)
        tallies["h2_lipschitz_time"].add(lhs2, sd * U2 * (ty + tz) * te)

        es = ys - zs
        sup_y = float(np.max(stacked_norms(ys, domain, "Y")))
        sup_z = float(np.max(stacked_norms(zs, domain, "Y")))
        sup_e = float(np.max(stacked_norms(es, domain, "Y")))
        l2_e_v = float(np.sqrt(grid.dt * np.sum(stacked_norms(es[:-1], domain, "Vv") ** 2)))
        l2_z_v = float(np.sqrt(grid.dt * np.sum(stacked_norms(zs[:-1], domain, "Vv") ** 2)))
        l2_e_y = float(np.sqrt(grid.dt * np.sum(stacked_norms(es[:-1], domain, "Y") ** 2)))
        tallies["h1_lipschitz_split"].add(lhs1, U2 * (sup_y * l2_e_v + sup_e * l2_z_v))
        tallies["h2_lipschitz_split"].add(lhs2, sd * U2 * (sup_y + sup_z) * l2_e_y)

    results = [t.result() for t in tallies.values()]
    for r in results:
        logger.info("%s: worst ratio %.6f (%s)", r.name, r.worst_ratio, "pass" if r.passed else "FAIL")
    return results


@dataclass
class ConstantsTable:
    """Empirical constants shared by the feasibility and uniqueness diagnostics.
    可行性与唯一性诊断共用的经验常数表。
    """

    c_hat: float
    c_hat_batches: List[float]
    n_norm: float
    n_norm_power: float
    U_norm_L2: float
    B_norm: float
    kappa: float
    kappa_uncontrolled: float
    mu: float
    solution_bound: float
    solution_bound_args: Dict[str, float] = field(default_factory=dict)
    samples: Dict[str, int] = field(default_factory=dict)
    domain: Dict[str, float] = field(default_factory=dict)
    grid: Dict[str, float] = field(default_factory=dict)
    label: str = "empirical"
    version: int = CONSTANTS_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    @classmethod
    def load(cls, path) -> "ConstantsTable":
        """Load a persisted table.

        Raises:
            ValueError: On a version mismatch (版本不匹配)
        """
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        version = data.get("version")
        if version != CONSTANTS_VERSION:
            raise ValueError(f"constants table version {version} != supported {CONSTANTS_VERSION}")
        return cls(**data)


def estimate_c_hat(
    domain: DomainSpec,
    U: PotentialSpec,
    grid: TimeGrid,
    rng: np.random.Generator,
    n_samples: int = 50,
) -> float:
    """Max of |||y||| / (||y0||_Y + ||g||_{L^2(V_v')}) over random linear solves.

    Data are band-limited so the explicit transport stays inside its
    stability region on the grid.
    """
    worst = 0.0
    for _ in range(n_samples):
        y0 = random_field(domain, rng, amplitude=float(rng.uniform(0.0, 1.0)), band_limited=True)
        g_scale = float(rng.uniform(0.0, 1.0))
        base = random_field(domain, rng, band_limited=True).coeffs
        drift = random_field(domain, rng, band_limited=True).coeffs
        s = (grid.times() / grid.T).reshape((-1,) + (1,) * (2 * domain.d))
        g = g_scale * ((1.0 - s) * base + s * drift)
        traj = solve_linear(y0, g, grid, U)
        if traj.stability_ratio is not None:
            worst = max(worst, traj.stability_ratio)
    return worst


def estimate_n_norm(
    domain: DomainSpec,
    U: PotentialSpec,
    alpha: ControlShape,
    rng: np.random.Generator,
    n_iter: int = 50,
    n_random: int = 20,
) -> "tuple[float, float]":
    """Estimate ||N||_{L(Y, V_v')} by power iteration on N^* R^-1 N plus random samples.
    用幂迭代与随机样本估计 ||N||。

    Returns:
        (estimate, power-iteration value); the estimate is the max of both.
    """
    ops = KineticOperators(U, alpha)
    weight = 1.0 / (1.0 + sum(hermite_degrees(domain)))

    def ratio(c: np.ndarray) -> float:
        ny = norm_Y(SpectralField(c, domain))
        if ny == 0:
            return 0.0
        return dual_norm_Vv(SpectralField(ops.N(c), domain)) / ny

    x = random_field(domain, rng).coeffs
    power = 0.0
    for _ in range(n_iter):
        x_new = ops.N_adjoint(weight * ops.N(x))
        size = float(np.sqrt(np.sum(np.abs(x_new) ** 2)))
        if size == 0:
            return 0.0, 0.0
        x = make_real(x_new / size, domain)
        power = max(power, ratio(x))
    sampled = max((ratio(random_field(domain, rng).coeffs) for _ in range(n_random)), default=0.0)
    return max(power, sampled), power


def estimate_solution_bound(
    domain: DomainSpec,
    U: PotentialSpec,
    alpha: ControlShape,
    grid: TimeGrid,
    rng: np.random.Generator,
    k0: float,
    k1: float,
    k2: float,
    n_samples: int = 10,
) -> float:
    """Surrogate for the solution bound C(k0, k1, k2): max observed ||y||_{L^inf(0,T;Y)}.

    Samples use ||y0||_Y = k0 and random cellwise controls with |u| <= k1.
    ``k2`` is recorded by the caller; it does not enter the sampling.
    """
    worst = 0.0
    for _ in range(n_samples):
        y0 = random_field(domain, rng, amplitude=k0, band_limited=True)
        u = ControlSignal(rng.uniform(-k1, k1, grid.Nt), -max(k1, 0.0), max(k1, 0.0))
        try:
            traj = direct_march(y0, u, grid, U, alpha)
        except SolverBlowUpError:
            return math.inf
        worst = max(worst, float(np.max(traj.normY_history)))
    return worst


def estimate_constants(
    domain: DomainSpec,
    U: PotentialSpec,
    alpha: ControlShape,
    grid: TimeGrid,
    seed: int = 0,
    batch_size: int = 50,
    n_batches: int = 2,
    solution_args: Optional[Dict[str, float]] = None,
    n_bound_samples: int = 10,
) -> ConstantsTable:
    """Randomized estimates of C, ||N||, kappa, mu and the solution-bound surrogate.
    随机化估计各常数。
    """
    rng = np.random.default_rng(seed)
    batches = [estimate_c_hat(domain, U, grid, rng, batch_size) for _ in range(n_batches)]
    c_hat = max(batches)
    n_norm, n_power = estimate_n_norm(domain, U, alpha, rng)
    U2 = U.norm_L2
    d = domain.d
    kappa = existence_kappa(c_hat, U2, d)
    args = {"k0": 1e-2, "k1": 1.0, "k2": kappa}
    args.update(solution_args or {})
    bound = estimate_solution_bound(
        domain, U, alpha, grid, rng, args["k0"], args["k1"], args["k2"], n_bound_samples
    )
    B = SpectralField(KineticOperators(U, alpha).B, domain)
    table = ConstantsTable(
        c_hat=c_hat,
        c_hat_batches=batches,
        n_norm=n_norm,
        n_norm_power=n_power,
        U_norm_L2=U2,
        B_norm=norm_Y(B),
        kappa=kappa,
        kappa_uncontrolled=1.0 / (8.0 * math.sqrt(d) * U2 * c_hat),
        mu=3.0 / (32.0 * math.sqrt(d) * U2 * c_hat ** 2),
        solution_bound=bound,
        solution_bound_args=args,
        samples={"c_hat": batch_size * n_batches, "n_norm_random": 20, "solution_bound": n_bound_samples},
        domain=domain.to_dict(),
        grid={"T": grid.T, "Nt": grid.Nt},
    )
    logger.info("constants: C=%.4f ||N||=%.4f kappa=%.4e mu=%.4e", c_hat, n_norm, kappa, table.mu)
    return table
