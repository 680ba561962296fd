"""Euler–Maruyama simulation of the interacting particle system.
相互作用粒子系统的 Euler–Maruyama 模拟。

    dx_i = v_i dt
    dv_i = w sum_j U_per(x_j - x_i)(v_j - v_i) dt - u alpha(x_i) dt
           + sqrt(2 w sum_j U_per(x_j - x_i)) dW_i

Every particle carries weight w = M/m, where M = (2L)^d (1 + y0_hat_00) is the
PDE mass of f0 = mu (1 + y0). The j = i term is kept in both sums.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from .evolution import Trajectory
from .operators import ControlShape, PotentialSpec, convolve_U
from .spectral import DomainSpec, SpectralField, build_basis, evaluate, moments, to_nodal

logger = logging.getLogger(__name__)

FORCE_METHODS = ("direct", "mesh", "auto")
DIRECT_LIMIT = 2000
SAMPLING_STREAM = 1

MEANFIELD_FLAGS = (
    "control drift -u alpha(x_i) is derived from u alpha.grad_v f = div_v(u alpha f)",
    "interaction and noise sums are scaled by the particle weight M/m",
)


def stream(seed: int, replicate: int, step: int, channel: int = 0) -> np.random.Generator:
    """Counter-based normal stream for (seed, replicate, step).
    基于计数器的随机流。

    Particle i draws the i-th block of the stream, so the noise of a particle
    depends only on (seed, replicate, particle, step).
    """
    key = np.array([seed, replicate], dtype=np.uint64)
    counter = np.array([0, 0, step, channel], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def wrap(x: np.ndarray, L: float) -> np.ndarray:
    """Map positions into [-L, L)."""
    return (x + L) % (2.0 * L) - L


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Positions and velocities of m particles with their stream coordinates.
    m 个粒子的位置、速度及随机流坐标。
    """

    x: np.ndarray
    v: np.ndarray
    domain: DomainSpec
    weight: float
    seed: int = 0
    replicate: int = 0
    step: int = 0

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1, self.domain.d)
        v = np.array(self.v, dtype=float).reshape(-1, self.domain.d)
        if x.shape != v.shape:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} disagree")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("ensemble has non-finite positions or velocities")
        if not self.weight > 0:
            raise ValueError(f"particle weight must be positive, got {self.weight}")
        x = wrap(x, self.domain.L)
        x.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def m(self) -> int:
        return self.x.shape[0]


def _cic_stencil(x: np.ndarray, domain: DomainSpec):
    """Cloud-in-cell node indices and weights, each of shape (m, 2^d)."""
    s = (x + domain.L) / domain.h
    base = np.floor(s).astype(int)
    frac = s - base
    indices, weights = [], []
    for corner in np.ndindex(*(2,) * domain.d):
        corner = np.asarray(corner)
        idx = (base + corner) % domain.Nx
        w = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
        indices.append(np.ravel_multi_index(tuple(idx.T), domain.spatial_shape))
        weights.append(w)
    return np.stack(indices, axis=1), np.stack(weights, axis=1)


def _deposit(indices: np.ndarray, weights: np.ndarray, values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    grid = np.zeros(domain.n_nodes)
    np.add.at(grid, indices.ravel(), (weights * values[:, None]).ravel())
    return grid.reshape(domain.spatial_shape)


def _gather(indices: np.ndarray, weights: np.ndarray, field_values: np.ndarray) -> np.ndarray:
    return np.sum(field_values.ravel()[indices] * weights, axis=1)


def _interaction_direct(ens: ParticleEnsemble, U: PotentialSpec, chunk: int = 512):
    """Exact pair sums (w sum_j U_per, w sum_j U_per v_j)."""
    rho = np.empty(ens.m)
    mom = np.empty((ens.m, ens.domain.d))
    for start in range(0, ens.m, chunk):
        xs = ens.x[start:start + chunk]
        r = wrap(ens.x[None, :, :] - xs[:, None, :], ens.domain.L)
        K = U.evaluate_periodic(r)
        rho[start:start + chunk] = ens.weight * K.sum(axis=1)
        mom[start:start + chunk] = ens.weight * (K @ ens.v)
    return rho, mom


def _interaction_mesh(ens: ParticleEnsemble, U: PotentialSpec):
    """Particle-mesh sums: CIC deposit, FFT convolution, CIC gather."""
    domain = ens.domain
    indices, weights = _cic_stencil(ens.x, domain)
    cell = domain.h ** domain.d
    ones = np.full(ens.m, ens.weight / cell)
    rho_grid = convolve_U(_deposit(indices, weights, ones, domain), U)
    rho = _gather(indices, weights, rho_grid)
    mom = np.empty((ens.m, domain.d))
    for i in range(domain.d):
        grid_i = convolve_U(_deposit(indices, weights, ens.weight / cell * ens.v[:, i], domain), U)
        mom[:, i] = _gather(indices, weights, grid_i)
    return rho, mom


def alpha_at(alpha: ControlShape, x: np.ndarray) -> np.ndarray:
    """CIC interpolation of alpha at particle positions, shape (m, d)."""
    indices, weights = _cic_stencil(x, alpha.domain)
    nodal = alpha.nodal
    return np.stack([_gather(indices, weights, nodal[i]) for i in range(alpha.domain.d)], axis=1)


def particle_step(
    ens: ParticleEnsemble,
    u: float,
    dt: float,
    U: PotentialSpec,
    alpha: Optional[ControlShape] = None,
    noise_on: bool = True,
    method: str = "auto",
) -> ParticleEnsemble:
    """One Euler–Maruyama step.
    一个 Euler–Maruyama 时间步。

    Args:
        ens: Current ensemble (当前粒子系综)
        u: Control value on this step (本步控制值)
        dt: Step size > 0 (时间步长)
        U: Communication potential (通讯势函数)
        alpha: Control profile, None for no control (控制分布)
        noise_on: Include the density-dependent noise (是否加入噪声)
        method: "direct", "mesh" or "auto" (相互作用计算方式)
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if method not in FORCE_METHODS:
        raise ValueError(f"unknown force method {method!r} (expected one of {FORCE_METHODS})")
    if method == "auto":
        method = "direct" if ens.m <= DIRECT_LIMIT else "mesh"
    if method == "direct":
        rho, mom = _interaction_direct(ens, U)
    else:
        rho, mom = _interaction_mesh(ens, U)
    # FFT round-off can push the mesh density slightly below zero
    rho = np.maximum(rho, 0.0)

    dv = (mom - ens.v * rho[:, None]) * dt
    if alpha is not None and u != 0.0:
        dv -= u * alpha_at(alpha, ens.x) * dt
    if noise_on:
        xi = stream(ens.seed, ens.replicate, ens.step).standard_normal((ens.m, ens.domain.d))
        dv += np.sqrt(2.0 * rho * dt)[:, None] * xi
    return ParticleEnsemble(
        x=ens.x + ens.v * dt,
        v=ens.v + dv,
        domain=ens.domain,
        weight=ens.weight,
        seed=ens.seed,
        replicate=ens.replicate,
        step=ens.step + 1,
    )


def initial_mass(y0: SpectralField) -> float:
    """PDE mass (2L)^d (1 + y0_hat_00) of f0 = mu (1 + y0)."""
    return float(y0.domain.volume * (1.0 + y0.coeffs[(0,) * (2 * y0.domain.d)].real))


def check_positive(y0: SpectralField) -> float:
    """Minimum of 1 + y0 on the spatial grid times Gauss–Hermite nodes.

    Raises:
        ValueError: If f0 = mu (1 + y0) is negative somewhere (初始分布为负)
    """
    domain = y0.domain
    basis = build_basis(domain)
    nodal = to_nodal(y0.coeffs, domain).real
    for i in range(domain.d):
        nodal = np.moveaxis(np.tensordot(nodal, basis.values, axes=([domain.d + i], [0])), -1, domain.d + i)
    low = 1.0 + float(nodal.min())
    if low < 0:
        raise ValueError(f"initial datum makes f0 negative (min of 1 + y0 = {low:.3e}); instance rejected")
    return low


def sample_ensemble(
    y0: SpectralField,
    m: int,
    seed: int = 0,
    replicate: int = 0,
    batch: int = 65536,
) -> ParticleEnsemble:
    """Sample m particles from f0 = mu (1 + y0) by rejection against mu x uniform.
    通过拒绝采样从 f0 抽取粒子。
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    domain = y0.domain
    check_positive(y0)
    rng = stream(seed, replicate, 0, channel=SAMPLING_STREAM)
    flat = not np.any(y0.coeffs)

    def propose(n):
        return rng.uniform(-domain.L, domain.L, (n, domain.d)), rng.standard_normal((n, domain.d))

    if flat:
        x, v = propose(m)
    else:
        px, pv = propose(batch)
        bound = 1.1 * float(np.max(1.0 + evaluate(y0, px, pv)))
        xs, vs, have, clipped = [], [], 0, 0
        while have < m:
            px, pv = propose(batch)
            ratio = 1.0 + evaluate(y0, px, pv)
            clipped += int(np.sum(ratio > bound))
            keep = rng.uniform(0.0, bound, batch) < ratio
            xs.append(px[keep])
            vs.append(pv[keep])
            have += int(keep.sum())
        if clipped:
            logger.warning("rejection bound exceeded by %d proposals", clipped)
        x = np.concatenate(xs)[:m]
        v = np.concatenate(vs)[:m]
    return ParticleEnsemble(x=x, v=v, domain=domain, weight=initial_mass(y0) / m,
                            seed=seed, replicate=replicate)


@dataclass
class EnsembleStats:
    """Velocity moments and binned densities of an ensemble.
    粒子系综的速度矩与分箱密度。
    """

    m: int
    weight: float
    mean_velocity: np.ndarray
    covariance: np.ndarray
    counts: np.ndarray
    momentum: np.ndarray
    cell_volume: float

    @property
    def density(self) -> np.ndarray:
        """Estimate of rho_f at the nodes."""
        return self.weight * self.counts / self.cell_volume

    @property
    def momentum_density(self) -> np.ndarray:
        """Estimate of rho_{vf} at the nodes, shape (d,) + spatial_shape."""
        return self.weight * self.momentum / self.cell_volume


def estimate_stats(ens: ParticleEnsemble, domain: Optional[DomainSpec] = None) -> EnsembleStats:
    """Nearest-node binning on the PDE grid plus velocity mean and covariance.
    在 PDE 网格上分箱统计。
    """
    domain = domain or ens.domain
    idx = np.rint((ens.x + domain.L) / domain.h).astype(int) % domain.Nx
    flat = np.ravel_multi_index(tuple(idx.T), domain.spatial_shape)
    counts = np.bincount(flat, minlength=domain.n_nodes).reshape(domain.spatial_shape)
    momentum = np.stack([
        np.bincount(flat, weights=ens.v[:, i], minlength=domain.n_nodes).reshape(domain.spatial_shape)
        for i in range(domain.d)
    ])
    mean = ens.v.mean(axis=0)
    centered = ens.v - mean
    cov = centered.T @ centered / ens.m
    return EnsembleStats(
        m=ens.m,
        weight=ens.weight,
        mean_velocity=mean,
        covariance=cov,
        counts=counts,
        momentum=momentum,
        cell_volume=domain.h ** domain.d,
    )


def density_confidence(stats_: EnsembleStats, level: float = 0.997) -> float:
    """Half-width of a normal-approximation band for a flat binned density."""
    p = 1.0 / stats_.counts.size
    z = stats.norm.ppf(0.5 + level / 2.0)
    sd = np.sqrt(stats_.m * p * (1.0 - p))
    return float(z * sd * stats_.weight / stats_.cell_volume)


def run_replicate(
    y0: SpectralField,
    controls: np.ndarray,
    dt: float,
    U: PotentialSpec,
    alpha: Optional[ControlShape],
    m: int,
    record_steps: Sequence[int],
    seed: int = 0,
    replicate: int = 0,
    noise_on: bool = True,
    method: str = "auto",
) -> Dict[int, EnsembleStats]:
    """Sample, march and bin one replicate; returns stats keyed by step index."""
    ens = sample_ensemble(y0, m, seed=seed, replicate=replicate)
    wanted = set(int(s) for s in record_steps)
    out: Dict[int, EnsembleStats] = {}
    if 0 in wanted:
        out[0] = estimate_stats(ens)
    last = max(wanted) if wanted else 0
    for n in range(last):
        u = float(controls[n]) if n < len(controls) else 0.0
        ens = particle_step(ens, u, dt, U, alpha, noise_on=noise_on, method=method)
        if n + 1 in wanted:
            out[n + 1] = estimate_stats(ens)
    return out


@dataclass
class MeanFieldRow:
    time: float
    density_rms: float
    density_se: float
    momentum_rms: float
    momentum_se: float

    @property
    def density_ratio(self) -> float:
        return self.density_rms / self.density_se if self.density_se > 0 else float("inf")

    @property
    def momentum_ratio(self) -> float:
        return self.momentum_rms / self.momentum_se if self.momentum_se > 0 else float("inf")

    def to_dict(self) -> dict:
        return {
            "t": self.time,
            "density_rms": self.density_rms,
            "density_se": self.density_se,
            "density_ratio": self.density_ratio,
            "momentum_rms": self.momentum_rms,
            "momentum_se": self.momentum_se,
            "momentum_ratio": self.momentum_ratio,
        }


@dataclass
class MeanFieldReport:
    """Particle versus PDE moment discrepancies with Monte-Carlo error bars.
    粒子与 PDE 矩的偏差及蒙特卡洛误差。
    """

    m: int
    replicates: int
    rows: List[MeanFieldRow]
    flags: List[str] = field(default_factory=lambda: list(MEANFIELD_FLAGS))

    def within(self, n_se: float = 3.0) -> bool:
        return all(row.density_ratio <= n_se for row in self.rows)


def _pde_moments(pde: Trajectory, n: int):
    mf = moments(pde.state(n))
    return 1.0 + mf.rho, mf.rho_v


def meanfield_compare(
    runs: Sequence[Dict[int, EnsembleStats]],
    pde: Trajectory,
    times: Sequence[float],
    particle_dt: float,
) -> MeanFieldReport:
    """Compare replicate-averaged binned moments with PDE moments at the given times.
    比较粒子系综平均矩与 PDE 矩。

    The PDE state is taken at the grid node nearest to each time; the
    particle stats at step round(t / particle_dt).
    """
    if not runs:
        raise ValueError("meanfield_compare needs at least one replicate")
    rows = []
    R = len(runs)
    for t in times:
        step = int(round(t / particle_dt))
        node = int(round(t / pde.grid.dt))
        if node > pde.grid.Nt:
            raise ValueError(f"time {t} lies beyond the PDE horizon {pde.grid.T}")
        rho_pde, mom_pde = _pde_moments(pde, node)
        dens = np.stack([run[step].density for run in runs])
        mom = np.stack([run[step].momentum_density for run in runs])
        d_mean = dens.mean(axis=0)
        m_mean = mom.mean(axis=0)
        d_se = dens.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full_like(d_mean, np.nan)
        m_se = mom.std(axis=0, ddof=1) / np.sqrt(R) if R > 1 else np.full_like(m_mean, np.nan)
        rows.append(MeanFieldRow(
            time=float(t),
            density_rms=float(np.sqrt(np.mean((d_mean - rho_pde) ** 2))),
            density_se=float(np.sqrt(np.mean(d_se ** 2))),
            momentum_rms=float(np.sqrt(np.mean((m_mean - mom_pde) ** 2))),
            momentum_se=float(np.sqrt(np.mean(m_se ** 2))),
        ))
    m = next(iter(runs[0].values())).m
    return MeanFieldReport(m=m, replicates=R, rows=rows)

