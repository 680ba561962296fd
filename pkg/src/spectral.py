"""Fourier–Hermite spectral substrate for the perturbation variable y.
扰动变量 y 的 Fourier–Hermite 谱离散基础模块。

Fields live on the periodic torus [-L, L)^d in x and are expanded in the
probabilists' Hermite functions H_k(v), orthonormal with respect to the
Maxwellian weight mu(v), in velocity. Coefficient arrays have shape
``(Nx,)*d + (Kv+1,)*d``; spatial axes come first and use numpy FFT ordering.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple

import numpy as np
from scipy.special import roots_hermitenorm

logger = logging.getLogger(__name__)

MAX_HERMITE_DEGREE = 180
MOMENT_RESIDUE_TOL = 1e-10


class MomentResidueError(ValueError):
    """Raised when nodal moment fields are not real to tolerance.
    当矩场的虚部超出容差时抛出。
    """


@dataclass(frozen=True)
class DomainSpec:
    """Truncation of phase space: torus half-width, Fourier and Hermite sizes.
    相空间截断：环面半宽、Fourier 模数与 Hermite 最高阶数。
    """

    d: int = 1
    L: float = float(np.pi)
    Nx: int = 64
    Kv: int = 31

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValueError(f"d must be 1 or 2, got {self.d}")
        if self.Nx < 4 or self.Nx % 2:
            raise ValueError(f"Nx must be even and >= 4, got {self.Nx}")
        if self.Kv < 2:
            raise ValueError(f"Kv must be >= 2, got {self.Kv}")
        if not self.L > 0:
            raise ValueError(f"L must be positive, got {self.L}")

    @property
    def spatial_shape(self) -> Tuple[int, ...]:
        return (self.Nx,) * self.d

    @property
    def velocity_shape(self) -> Tuple[int, ...]:
        return (self.Kv + 1,) * self.d

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.spatial_shape + self.velocity_shape

    @property
    def spatial_axes(self) -> Tuple[int, ...]:
        return tuple(range(self.d))

    @property
    def velocity_axes(self) -> Tuple[int, ...]:
        return tuple(range(self.d, 2 * self.d))

    @property
    def volume(self) -> float:
        """Torus volume (2L)^d."""
        return (2.0 * self.L) ** self.d

    @property
    def h(self) -> float:
        """Grid spacing 2L/Nx."""
        return 2.0 * self.L / self.Nx

    @property
    def n_nodes(self) -> int:
        return self.Nx ** self.d

    def grid(self) -> np.ndarray:
        """Nodal coordinates x_n = -L + n h, one array per axis (ij indexing).
        网格节点坐标。
        """
        x1 = -self.L + self.h * np.arange(self.Nx)
        if self.d == 1:
            return x1[None, :]
        return np.stack(np.meshgrid(x1, x1, indexing="ij"))

    def to_dict(self) -> dict:
        return {"d": self.d, "L": self.L, "Nx": self.Nx, "Kv": self.Kv}


@lru_cache(maxsize=None)
def _integer_wavenumbers(Nx: int) -> np.ndarray:
    return np.rint(np.fft.fftfreq(Nx) * Nx).astype(int)


def wavenumbers(domain: DomainSpec, full: bool = True) -> Tuple[np.ndarray, ...]:
    """Integer Fourier indices j_i, broadcastable against coefficient arrays.
    返回可广播的整数波数数组。

    Args:
        domain: Phase-space truncation (相空间截断)
        full: Broadcast against the full coefficient shape rather than the
              spatial shape only (是否对完整系数形状广播)
    """
    ndim = 2 * domain.d if full else domain.d
    j = _integer_wavenumbers(domain.Nx)
    out = []
    for axis in range(domain.d):
        shape = [1] * ndim
        shape[axis] = domain.Nx
        out.append(j.reshape(shape))
    return tuple(out)


def derivative_symbols(domain: DomainSpec, full: bool = True) -> Tuple[np.ndarray, ...]:
    """Symbols i*pi*j_i/L of d/dx_i; the Nyquist mode is mapped to zero."""
    out = []
    for j in wavenumbers(domain, full):
        sym = 1j * np.pi * j / domain.L
        sym = np.where(np.abs(j) == domain.Nx // 2, 0.0, sym)
        out.append(sym)
    return tuple(out)


def hermite_degrees(domain: DomainSpec) -> Tuple[np.ndarray, ...]:
    """Hermite degree k_i per velocity axis, broadcastable against coefficients."""
    k = np.arange(domain.Kv + 1)
    out = []
    for i in range(domain.d):
        shape = [1] * (2 * domain.d)
        shape[domain.d + i] = domain.Kv + 1
        out.append(k.reshape(shape))
    return tuple(out)


def total_degree(domain: DomainSpec) -> np.ndarray:
    """|k| = k_1 + ... + k_d, broadcastable against coefficients."""
    return sum(hermite_degrees(domain))


def dealias_mask(domain: DomainSpec, full: bool = True) -> np.ndarray:
    """Two-thirds rule mask: True where every |j_i| < Nx/3."""
    mask = True
    for j in wavenumbers(domain, full):
        mask = mask & (3 * np.abs(j) < domain.Nx)
    return np.asarray(mask)


def _phase(domain: DomainSpec, ndim: int) -> np.ndarray:
    # grid starts at -L, so every mode picks up (-1)^j per axis
    phase = 1.0
    for axis, j in enumerate(wavenumbers(domain, full=False)):
        phase = phase * np.where(j % 2 == 0, 1.0, -1.0)
    return np.reshape(phase, domain.spatial_shape + (1,) * (ndim - domain.d))


def to_nodal(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Evaluate sum_j c_j exp(i pi j.x/L) at the grid nodes.
    将 Fourier 系数变换到网格节点值。

    Only the leading d axes are transformed; trailing axes ride along.
    """
    axes = domain.spatial_axes
    phase = _phase(domain, coeffs.ndim)
    return np.fft.ifftn(coeffs * phase, axes=axes) * domain.n_nodes


def to_coeffs(values: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Inverse of to_nodal: c_j = N^-d sum_n y(x_n) exp(-i pi j.x_n/L)."""
    axes = domain.spatial_axes
    phase = _phase(domain, np.ndim(values))
    return np.fft.fftn(values, axes=axes) / domain.n_nodes * phase


def conjugate_partner(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Return conj(c(-j, k)), the coefficients a real field must equal."""
    out = coeffs
    for axis in domain.spatial_axes:
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return np.conj(out)


def make_real(coeffs: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """Project coefficients onto real-valued fields (Nyquist modes dropped)."""
    out = 0.5 * (coeffs + conjugate_partner(coeffs, domain))
    for j in wavenumbers(domain, full=coeffs.ndim == 2 * domain.d):
        out = np.where(np.abs(j) == domain.Nx // 2, 0.0, out)
    return out


def velocity_index(domain: DomainSpec, k: Tuple[int, ...]) -> tuple:
    """Index tuple selecting the spatial slice of Hermite multi-index k."""
    if len(k) != domain.d:
        raise ValueError(f"multi-index {k} does not match d={domain.d}")
    return (slice(None),) * domain.d + tuple(k)


def unit_index(domain: DomainSpec, i: int) -> tuple:
    """velocity_index of e_i."""
    k = [0] * domain.d
    k[i] = 1
    return velocity_index(domain, tuple(k))


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of y(x, v) in the truncated Fourier ⊗ Hermite basis.
    截断 Fourier ⊗ Hermite 基下的场系数。
    """

    coeffs: np.ndarray
    domain: DomainSpec

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.shape != self.domain.shape:
            raise ValueError(
                f"coefficient shape {coeffs.shape} does not match domain shape {self.domain.shape}"
            )
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("field has non-finite coefficients")
        coeffs = coeffs.copy()
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(cls, domain: DomainSpec) -> "SpectralField":
        return cls(np.zeros(domain.shape, dtype=complex), domain)

    @classmethod
    def mode(cls, domain: DomainSpec, k: Tuple[int, ...], j: Optional[Tuple[int, ...]] = None,
             value: complex = 1.0) -> "SpectralField":
        """Single basis element exp(i pi j.x/L) H_k(v) (j defaults to 0)."""
        coeffs = np.zeros(domain.shape, dtype=complex)
        j = (0,) * domain.d if j is None else tuple(j)
        spatial = tuple(int(ji) % domain.Nx for ji in j)
        coeffs[spatial + tuple(k)] = value
        return cls(coeffs, domain)

    @classmethod
    def from_nodal_slices(cls, domain: DomainSpec, slices: dict) -> "SpectralField":
        """Build a field from nodal x-profiles keyed by Hermite multi-index."""
        coeffs = np.zeros(domain.shape, dtype=complex)
        for k, values in slices.items():
            values = np.broadcast_to(np.asarray(values, dtype=float), domain.spatial_shape)
            coeffs[velocity_index(domain, tuple(k))] = to_coeffs(values, domain)
        return cls(coeffs, domain)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _check_same_domain(self, other)
        return SpectralField(self.coeffs + other.coeffs, self.domain)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _check_same_domain(self, other)
        return SpectralField(self.coeffs - other.coeffs, self.domain)

    def __neg__(self) -> "SpectralField":
        return SpectralField(-self.coeffs, self.domain)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.coeffs * scalar, self.domain)

    __rmul__ = __mul__

    def is_real(self, tol: float = 1e-12) -> bool:
        """Check conjugate symmetry coeffs(-j, k) = conj(coeffs(j, k))."""
        diff = np.max(np.abs(self.coeffs - conjugate_partner(self.coeffs, self.domain)), initial=0.0)
        return diff <= tol * max(1.0, np.max(np.abs(self.coeffs), initial=0.0))


def _check_same_domain(a: SpectralField, b: SpectralField):
    if a.domain != b.domain:
        raise ValueError(f"fields live on different domains: {a.domain} vs {b.domain}")


@dataclass(frozen=True)
class MomentFields:
    """Nodal moment fields rho_{mu y}(x) and rho_{mu v y}(x).
    节点上的矩场。
    """

    rho: np.ndarray
    rho_v: np.ndarray


@dataclass(frozen=True, eq=False)
class BasisTables:
    """Hermite recurrence, ladder and quadrature tables for oracle checks.
    Hermite 递推、阶梯算子系数与求积表（仅用于校验）。
    """

    Kv: int
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    derivatives: np.ndarray
    raise_coeffs: np.ndarray
    lower_coeffs: np.ndarray

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix int H_k H_l mu dv."""
        return (self.values * self.weights) @ self.values.T

    def moment_matrix(self, power: int = 1) -> np.ndarray:
        """Quadrature of int v^p H_k H_l mu dv."""
        return (self.values * self.weights * self.nodes ** power) @ self.values.T

    def derivative_matrix(self) -> np.ndarray:
        """Quadrature of int (dH_k/dv) H_l mu dv."""
        return (self.derivatives * self.weights) @ self.values.T


def hermite_functions(v: np.ndarray, Kv: int) -> np.ndarray:
    """Normalized probabilists' Hermite polynomials H_0..H_Kv at points v.
    计算归一化概率论 Hermite 多项式。

    Returns an array of shape ``(Kv+1,) + v.shape``.
    """
    v = np.asarray(v, dtype=float)
    out = np.empty((Kv + 1,) + v.shape)
    out[0] = 1.0
    if Kv >= 1:
        out[1] = v
    for k in range(1, Kv):
        out[k + 1] = (v * out[k] - np.sqrt(k) * out[k - 1]) / np.sqrt(k + 1)
    return out


def build_basis(domain: DomainSpec) -> BasisTables:
    """Hermite tables at Gauss–Hermite nodes for the domain's Kv.
    在 Gauss–Hermite 节点上构造 Hermite 表。

    Raises:
        ValueError: If Kv exceeds MAX_HERMITE_DEGREE (超出递推上限)
    """
    Kv = domain.Kv
    if Kv > MAX_HERMITE_DEGREE:
        raise ValueError(f"Kv={Kv} exceeds the Hermite recurrence limit {MAX_HERMITE_DEGREE}")
    n_nodes = Kv + 4
    nodes, weights = roots_hermitenorm(n_nodes)
    weights = weights / np.sqrt(2.0 * np.pi)
    values = hermite_functions(nodes, Kv)
    k = np.arange(Kv + 1)
    derivatives = np.zeros_like(values)
    derivatives[1:] = np.sqrt(k[1:])[:, None] * values[:-1]
    return BasisTables(
        Kv=Kv,
        nodes=nodes,
        weights=weights,
        values=values,
        derivatives=derivatives,
        raise_coeffs=np.sqrt(k + 1.0),
        lower_coeffs=np.sqrt(k.astype(float)),
    )


# Ladder operations on coefficient arrays. Axis i is the i-th velocity axis.

def raise_v(coeffs: np.ndarray, domain: DomainSpec, i: int) -> np.ndarray:
    """Coefficients of sqrt(k_i) c_{k-e_i}: the creation half of v_i."""
    axis = domain.d + i
    out = np.zeros_like(coeffs)
    ladder = np.sqrt(np.arange(1, domain.Kv + 1, dtype=float))
    shape = [1] * coeffs.ndim
    shape[axis] = domain.Kv
    dst = [slice(None)] * coeffs.ndim
    src = [slice(None)] * coeffs.ndim
    dst[axis] = slice(1, None)
    src[axis] = slice(None, -1)
    out[tuple(dst)] = ladder.reshape(shape) * coeffs[tuple(src)]
    return out


def lower_v(coeffs: np.ndarray, domain: DomainSpec, i: int) -> np.ndarray:
    """Coefficients of sqrt(k_i+1) c_{k+e_i}, i.e. d/dv_i."""
    axis = domain.d + i
    out = np.zeros_like(coeffs)
    ladder = np.sqrt(np.arange(1, domain.Kv + 1, dtype=float))
    shape = [1] * coeffs.ndim
    shape[axis] = domain.Kv
    dst = [slice(None)] * coeffs.ndim
    src = [slice(None)] * coeffs.ndim
    dst[axis] = slice(None, -1)
    src[axis] = slice(1, None)
    out[tuple(dst)] = ladder.reshape(shape) * coeffs[tuple(src)]
    return out


def multiply_v(coeffs: np.ndarray, domain: DomainSpec, i: int) -> np.ndarray:
    """v_i H_k = sqrt(k_i+1) H_{k+e_i} + sqrt(k_i) H_{k-e_i}, truncated at Kv."""
    return raise_v(coeffs, domain, i) + lower_v(coeffs, domain, i)


def grad_v(y: SpectralField, i: int) -> SpectralField:
    """Partial derivative d y / d v_i as a field."""
    return SpectralField(lower_v(y.coeffs, y.domain, i), y.domain)


# Norms and pairings. All include the (2L)^d volume factor.

def inner_Y(a: SpectralField, b: SpectralField) -> float:
    """<a, b>_Y = int mu a b dx dv for real fields."""
    _check_same_domain(a, b)
    return float(a.domain.volume * np.real(np.vdot(a.coeffs, b.coeffs)))


def _sq_norm(coeffs: np.ndarray, weight=1.0) -> float:
    return float(np.sum(weight * (coeffs.real ** 2 + coeffs.imag ** 2)))


def norm_Y(y: SpectralField) -> float:
    """||y||_Y = ((2L)^d sum |c_jk|^2)^(1/2).
    加权 L^2_mu 范数。
    """
    return float(np.sqrt(y.domain.volume * _sq_norm(y.coeffs)))


def norm_Vv(y: SpectralField) -> float:
    """||y||_{V_v}, diagonal form ((2L)^d sum (1+|k|) |c_jk|^2)^(1/2)."""
    weight = 1.0 + total_degree(y.domain)
    return float(np.sqrt(y.domain.volume * _sq_norm(y.coeffs, weight)))


def dual_norm_Vv(g: SpectralField) -> float:
    """||g||_{V_v'} = ((2L)^d sum |c_jk|^2 / (1+|k|))^(1/2) on the truncated basis.

    The value under-approximates the continuum dual norm; callers that report
    it should also report ``g.domain.Kv`` and ``g.domain.Nx``.
    """
    weight = 1.0 / (1.0 + total_degree(g.domain))
    return float(np.sqrt(g.domain.volume * _sq_norm(g.coeffs, weight)))


def stacked_norms(states: np.ndarray, domain: DomainSpec, kind: str = "Y") -> np.ndarray:
    """Norms of a stack of coefficient arrays along the leading axis."""
    axes = tuple(range(1, states.ndim))
    if kind == "Y":
        weight = 1.0
    elif kind == "Vv":
        weight = 1.0 + total_degree(domain)
    elif kind == "Vv'":
        weight = 1.0 / (1.0 + total_degree(domain))
    else:
        raise ValueError(f"unknown norm kind: {kind}")
    sq = np.sum(weight * (states.real ** 2 + states.imag ** 2), axis=axes)
    return np.sqrt(domain.volume * sq)


def moments(y: SpectralField) -> MomentFields:
    """Nodal moments rho_{mu y} (k=0 slice) and rho_{mu v y} (k=e_i slices).
    计算节点上的密度矩和动量矩。

    Raises:
        MomentResidueError: If the nodal fields carry an imaginary residue above
                            1e-10 * ||y||_Y (虚部残差过大)
    """
    domain = y.domain
    rho = to_nodal(y.coeffs[velocity_index(domain, (0,) * domain.d)], domain)
    rho_v = np.stack([to_nodal(y.coeffs[unit_index(domain, i)], domain) for i in range(domain.d)])
    residue = max(np.max(np.abs(rho.imag)), np.max(np.abs(rho_v.imag)))
    scale = norm_Y(y)
    if residue > MOMENT_RESIDUE_TOL * scale:
        raise MomentResidueError(
            f"moment fields have imaginary residue {residue:.3e} (||y||_Y = {scale:.3e})"
        )
    return MomentFields(rho=rho.real.copy(), rho_v=rho_v.real.copy())


def evaluate(y: SpectralField, x: np.ndarray, v: np.ndarray, chunk: int = 8192) -> np.ndarray:
    """Pointwise values y(x_m, v_m) for arbitrary points (shape (m, d) each).

    Only modes with nonzero coefficients are summed.
    """
    domain = y.domain
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    if x.shape != v.shape or x.shape[1] != domain.d:
        raise ValueError(f"points must have shape (m, {domain.d})")
    nz = np.argwhere(np.abs(y.coeffs) > 0)
    out = np.zeros(x.shape[0])
    if nz.size == 0:
        return out
    values = y.coeffs[tuple(nz.T)]
    j = _integer_wavenumbers(domain.Nx)[nz[:, :domain.d]]
    k = nz[:, domain.d:]
    for start in range(0, x.shape[0], chunk):
        xs = x[start:start + chunk]
        vs = v[start:start + chunk]
        phase = np.exp(1j * np.pi / domain.L * (xs @ j.T))
        herm = np.ones((xs.shape[0], len(values)))
        for i in range(domain.d):
            table = hermite_functions(vs[:, i], int(k[:, i].max()))
            herm *= table[k[:, i]].T
        out[start:start + chunk] = np.real((phase * herm) @ values)
    return out
