"""Operators of the perturbed kinetic equation in coefficient space.
扰动动理学方程在系数空间中的算子。

    dy/dt = A y + D y - h1(y) - h2(y) + u N y + B u

Array-level kernels work on raw coefficient arrays (used by the time
marchers); the module-level functions take and return SpectralField values.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .spectral import (
    DomainSpec,
    SpectralField,
    dealias_mask,
    derivative_symbols,
    lower_v,
    multiply_v,
    raise_v,
    to_coeffs,
    to_nodal,
    total_degree,
    unit_index,
    velocity_index,
)

logger = logging.getLogger(__name__)

POTENTIAL_KINDS = ("wrapped-gaussian", "raised-cosine", "uniform-bump")
CONTROL_SHAPE_KINDS = ("gaussian", "constant", "zero")


def _profile(kind: str, r: np.ndarray, width: float) -> np.ndarray:
    """Unnormalized radial profile U(r) >= 0."""
    if kind == "wrapped-gaussian":
        return np.exp(-0.5 * (r / width) ** 2)
    if kind == "raised-cosine":
        return np.where(r < width, 0.5 * (1.0 + np.cos(np.pi * np.minimum(r, width) / width)), 0.0)
    if kind == "uniform-bump":
        s = np.minimum(r / width, 1.0)
        inside = s < 1.0
        safe = np.where(inside, 1.0 - s ** 2, 1.0)
        return np.where(inside, np.exp(1.0 - 1.0 / safe), 0.0)
    raise ValueError(f"unknown potential kind: {kind!r} (expected one of {POTENTIAL_KINDS})")


def _image_shifts(domain: DomainSpec) -> np.ndarray:
    """Shifts 2L z for the image shell |z_i| <= 1."""
    z = np.array(np.meshgrid(*([[-1, 0, 1]] * domain.d), indexing="ij")).reshape(domain.d, -1).T
    return 2.0 * domain.L * z


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Periodized communication potential U with its Fourier multiplier.
    周期化的通讯势函数 U 及其 Fourier 乘子。

    ``symbol`` holds (2L)^d * U_hat_j, so that U*g has coefficients
    symbol_j * g_hat_j and symbol_0 = 1.
    """

    domain: DomainSpec
    kind: str
    width: float
    scale: float
    values: np.ndarray
    symbol: np.ndarray

    @classmethod
    def create(cls, domain: DomainSpec, kind: str = "wrapped-gaussian", width: float = 0.5) -> "PotentialSpec":
        """Sample, periodize and normalize a named profile on the grid.
        在网格上采样、周期化并归一化势函数。

        Args:
            domain: Phase-space truncation (相空间截断)
            kind: One of POTENTIAL_KINDS (势函数类型)
            width: Gaussian sigma or support radius, 0 < width <= L (宽度参数)
        """
        if kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind: {kind!r} (expected one of {POTENTIAL_KINDS})")
        if not 0 < width <= domain.L:
            raise ValueError(f"potential width must lie in (0, L={domain.L}], got {width}")
        raw = _periodized_profile(kind, width, domain, domain.grid().reshape(domain.d, -1).T)
        raw = raw.reshape(domain.spatial_shape)
        total = domain.h ** domain.d * raw.sum()
        scale = 1.0 / total
        values = scale * raw
        symbol = np.real(to_coeffs(values, domain)) * domain.volume
        values.flags.writeable = False
        symbol.flags.writeable = False
        logger.debug("potential %s width=%.3g scale=%.6g", kind, width, scale)
        return cls(domain=domain, kind=kind, width=float(width), scale=scale, values=values, symbol=symbol)

    @property
    def norm_L1(self) -> float:
        return float(self.domain.h ** self.domain.d * np.sum(np.abs(self.values)))

    @property
    def norm_L2(self) -> float:
        return float(np.sqrt(self.domain.h ** self.domain.d * np.sum(self.values ** 2)))

    def evaluate_periodic(self, r: np.ndarray) -> np.ndarray:
        """U_per(r) for displacement vectors r of shape (..., d), same scaling as ``values``."""
        r = np.asarray(r, dtype=float)
        return self.scale * _periodized_profile(self.kind, self.width, self.domain, r)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "width": self.width,
            "norm_L1": self.norm_L1,
            "norm_L2": self.norm_L2,
        }


def _periodized_profile(kind: str, width: float, domain: DomainSpec, r: np.ndarray) -> np.ndarray:
    out = np.zeros(r.shape[:-1])
    for shift in _image_shifts(domain):
        out += _profile(kind, np.linalg.norm(r + shift, axis=-1), width)
    return out


@dataclass(frozen=True, eq=False)
class ControlShape:
    """Spatial control profile alpha(x) in R^d, band-limited to the 2/3 band.
    控制作用的空间分布 alpha(x)。

    ``coeffs`` has shape ``(d,) + spatial_shape``.
    """

    domain: DomainSpec
    coeffs: np.ndarray

    def __post_init__(self):
        expected = (self.domain.d,) + self.domain.spatial_shape
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.shape != expected:
            raise ValueError(f"alpha coefficients must have shape {expected}, got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("alpha has non-finite coefficients")
        coeffs = coeffs * dealias_mask(self.domain, full=False)
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def create(
        cls,
        domain: DomainSpec,
        kind: str = "gaussian",
        width: float = 1.0,
        center: Optional[Sequence[float]] = None,
        direction: Optional[Sequence[float]] = None,
        amplitude: float = 1.0,
    ) -> "ControlShape":
        """Build a named profile: centered Gaussian bump, constant or zero.

        The Gaussian bump is renormalized to peak ``amplitude`` along ``direction``
        (default e_1).
        """
        if kind not in CONTROL_SHAPE_KINDS:
            raise ValueError(f"unknown alpha kind: {kind!r} (expected one of {CONTROL_SHAPE_KINDS})")
        direction = np.zeros(domain.d) if direction is None else np.asarray(direction, dtype=float)
        if direction.shape != (domain.d,):
            raise ValueError(f"alpha direction must have length {domain.d}")
        if not np.any(direction):
            direction = np.eye(domain.d)[0]
        direction = direction / np.linalg.norm(direction)
        center = np.zeros(domain.d) if center is None else np.asarray(center, dtype=float)

        if kind == "zero":
            profile = np.zeros(domain.spatial_shape)
        elif kind == "constant":
            profile = np.ones(domain.spatial_shape)
        else:
            if width <= 0:
                raise ValueError(f"alpha width must be positive, got {width}")
            x = domain.grid()
            delta = x - center.reshape((domain.d,) + (1,) * domain.d)
            # nearest periodic image
            delta = (delta + domain.L) % (2.0 * domain.L) - domain.L
            profile = np.exp(-0.5 * np.sum(delta ** 2, axis=0) / width ** 2)
            profile = profile / profile.max()
        nodal = amplitude * direction.reshape((domain.d,) + (1,) * domain.d) * profile
        coeffs = np.stack([to_coeffs(nodal[i], domain) for i in range(domain.d)])
        return cls(domain=domain, coeffs=coeffs)

    @property
    def nodal(self) -> np.ndarray:
        """Real nodal values, shape (d,) + spatial_shape."""
        return np.stack([to_nodal(c, self.domain).real for c in self.coeffs])

    @property
    def norm_L2(self) -> float:
        return float(np.sqrt(self.domain.volume * np.sum(np.abs(self.coeffs) ** 2)))

    @property
    def norm_Linf(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.nodal ** 2, axis=0))))


def convolve_U(g: np.ndarray, U: PotentialSpec) -> np.ndarray:
    """Periodic convolution (U*g)(x) of a nodal spatial field, by Fourier multiplication.
    周期卷积 U*g。

    Raises:
        ValueError: If g is not sampled on U's grid (网格不匹配)
    """
    g = np.asarray(g)
    if g.shape != U.domain.spatial_shape:
        raise ValueError(f"field shape {g.shape} does not match potential grid {U.domain.spatial_shape}")
    out = to_nodal(U.symbol * to_coeffs(g, U.domain), U.domain)
    return out.real if np.isrealobj(g) else out


def transport(c: np.ndarray, domain: DomainSpec) -> np.ndarray:
    """-v.grad_x y via ladder ops and the derivative symbols."""
    dx = derivative_symbols(domain, full=True)
    out = np.zeros_like(c)
    for i in range(domain.d):
        out -= dx[i] * multiply_v(c, domain, i)
    return out


def dealiased_product(a: np.ndarray, w: np.ndarray, domain: DomainSpec,
                      conjugate: bool = False) -> np.ndarray:
    """Coefficients of a(x) w(x, v) for spatial coefficients a, 2/3 rule on inputs and output.
    去混叠的逐点乘积。

    With ``conjugate=True`` the nodal values of a are conjugated, which gives
    the adjoint of w -> a w.
    """
    mask_full = dealias_mask(domain, full=True)
    a_nodal = to_nodal(a * dealias_mask(domain, full=False), domain)
    if conjugate:
        a_nodal = np.conj(a_nodal)
    a_nodal = a_nodal.reshape(a_nodal.shape + (1,) * domain.d)
    w_nodal = to_nodal(w * mask_full, domain)
    return to_coeffs(a_nodal * w_nodal, domain) * mask_full


class KineticOperators:
    """Array kernels for one (domain, potential, alpha) triple.
    给定 (区域, 势函数, 控制分布) 的算子核。

    All kernels map coefficient arrays of shape ``domain.shape`` to arrays of
    the same shape. Nodal products use the 2/3 rule on both factors and the
    result.
    """

    def __init__(self, U: PotentialSpec, alpha: Optional[ControlShape] = None):
        if alpha is not None and alpha.domain != U.domain:
            raise ValueError("potential and alpha live on different domains")
        self.domain = U.domain
        self.U = U
        self.alpha = alpha if alpha is not None else ControlShape.create(U.domain, kind="zero")
        domain = self.domain
        self._degree = total_degree(domain)
        self._mask_full = dealias_mask(domain, full=True)
        self._mask_spatial = dealias_mask(domain, full=False)
        self._k0 = velocity_index(domain, (0,) * domain.d)
        self._e = [unit_index(domain, i) for i in range(domain.d)]
        self._B = self._build_B()

    # -- linear part ----------------------------------------------------

    def ou(self, c: np.ndarray) -> np.ndarray:
        """Ornstein–Uhlenbeck part of A: -|k| c."""
        return -self._degree * c

    def transport(self, c: np.ndarray) -> np.ndarray:
        return transport(c, self.domain)

    def A(self, c: np.ndarray) -> np.ndarray:
        return self.ou(c) + self.transport(c)

    def A_adjoint(self, c: np.ndarray) -> np.ndarray:
        """A* = Delta_v - v.grad_v + v.grad_x; transport is skew in Y."""
        return self.ou(c) - self.transport(c)

    def D(self, c: np.ndarray, conjugate: bool = False) -> np.ndarray:
        """(U*rho_{mu v y}).v, nonzero only on the k = e_i slices."""
        symbol = np.conj(self.U.symbol) if conjugate else self.U.symbol
        out = np.zeros_like(c)
        for e in self._e:
            out[e] = symbol * c[e]
        return out

    def R0(self, c: np.ndarray) -> np.ndarray:
        return self._degree * c

    # -- nodal products -------------------------------------------------

    def product(self, a: np.ndarray, w: np.ndarray, conjugate: bool = False) -> np.ndarray:
        return dealiased_product(a, w, self.domain, conjugate)

    def pair(self, w: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Adjoint of s -> product(s, w), applied to p; returns spatial coefficients."""
        w_nodal = to_nodal(w * self._mask_full, self.domain)
        p_nodal = to_nodal(p * self._mask_full, self.domain)
        summed = np.sum(np.conj(w_nodal) * p_nodal, axis=self.domain.velocity_axes)
        return to_coeffs(summed, self.domain) * self._mask_spatial

    def S(self, c: np.ndarray, i: int) -> np.ndarray:
        """(d/dv_i - v_i) y; in Hermite coefficients, minus the raising ladder."""
        return -raise_v(c, self.domain, i)

    def S_adjoint(self, c: np.ndarray, i: int) -> np.ndarray:
        return -lower_v(c, self.domain, i)

    def _momentum_potential(self, c: np.ndarray, i: int) -> np.ndarray:
        return self.U.symbol * c[self._e[i]]

    # -- nonlinear and control terms ------------------------------------

    def h1(self, c: np.ndarray) -> np.ndarray:
        """(U*rho_{mu y}) R0 y."""
        return self.product(self.U.symbol * c[self._k0], self.R0(c))

    def h2(self, c: np.ndarray) -> np.ndarray:
        """(U*rho_{mu v y}).(grad_v y - y v)."""
        out = np.zeros_like(c)
        for i in range(self.domain.d):
            out += self.product(self._momentum_potential(c, i), self.S(c, i))
        return out

    def N(self, c: np.ndarray) -> np.ndarray:
        """alpha.(grad_v y - y v)."""
        out = np.zeros_like(c)
        for i in range(self.domain.d):
            out += self.product(self.alpha.coeffs[i], self.S(c, i))
        return out

    def N_adjoint(self, p: np.ndarray) -> np.ndarray:
        out = np.zeros_like(p)
        for i in range(self.domain.d):
            out += self.S_adjoint(self.product(self.alpha.coeffs[i], p, conjugate=True), i)
        return out

    def _build_B(self) -> np.ndarray:
        out = np.zeros(self.domain.shape, dtype=complex)
        for i, e in enumerate(self._e):
            out[e] = -self.alpha.coeffs[i]
        return out

    @property
    def B(self) -> np.ndarray:
        return self._B

    def h1_derivative_adjoint(self, c: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Adjoint of the linearization of h1 at c, applied to p."""
        a = self.U.symbol * c[self._k0]
        out = self.R0(self.product(a, p, conjugate=True))
        out[self._k0] += np.conj(self.U.symbol) * self.pair(self.R0(c), p)
        return out

    def h2_derivative_adjoint(self, c: np.ndarray, p: np.ndarray) -> np.ndarray:
        """Adjoint of the linearization of h2 at c, applied to p."""
        out = np.zeros_like(p)
        for i in range(self.domain.d):
            m = self._momentum_potential(c, i)
            out += self.S_adjoint(self.product(m, p, conjugate=True), i)
            out[self._e[i]] += np.conj(self.U.symbol) * self.pair(self.S(c, i), p)
        return out

    # -- assembled right-hand sides -------------------------------------

    def explicit(self, c: np.ndarray, u: float = 0.0, nonlinear: bool = True,
                 control: bool = True) -> np.ndarray:
        """Everything except the OU part: transport + D - h1 - h2 + u(N y + B)."""
        out = self.transport(c) + self.D(c)
        if nonlinear:
            out -= self.h1(c) + self.h2(c)
        if control and u != 0.0:
            out += u * (self.N(c) + self._B)
        return out

    def rhs(self, c: np.ndarray, u: float = 0.0, nonlinear: bool = True,
            control: bool = True) -> np.ndarray:
        return self.ou(c) + self.explicit(c, u, nonlinear, control)

    def explicit_adjoint(self, c: np.ndarray, u: float, p: np.ndarray, nonlinear: bool = True,
                         control: bool = True) -> np.ndarray:
        """Adjoint of the linearization of ``explicit`` at (c, u), applied to p."""
        out = -self.transport(p) + self.D(p, conjugate=True)
        if nonlinear:
            out -= self.h1_derivative_adjoint(c, p) + self.h2_derivative_adjoint(c, p)
        if control and u != 0.0:
            out += u * self.N_adjoint(p)
        return out

    def control_derivative(self, c: np.ndarray) -> np.ndarray:
        """d explicit / d u = N y + B."""
        return self.N(c) + self._B


def _ops(y: SpectralField, U: PotentialSpec, alpha: Optional[ControlShape] = None) -> KineticOperators:
    if y.domain != U.domain:
        raise ValueError("field and potential live on different domains")
    return KineticOperators(U, alpha)


def _field(c: np.ndarray, domain: DomainSpec) -> SpectralField:
    return SpectralField(c, domain)


def apply_A(y: SpectralField) -> SpectralField:
    """A y = Delta_v y - v.grad_v y - v.grad_x y.
    线性输运-扩散算子 A。
    """
    c = y.coeffs
    return _field(-total_degree(y.domain) * c + transport(c, y.domain), y.domain)


def apply_A_adjoint(y: SpectralField) -> SpectralField:
    """A* y = Delta_v y - v.grad_v y + v.grad_x y."""
    c = y.coeffs
    return _field(-total_degree(y.domain) * c - transport(c, y.domain), y.domain)


def apply_D(y: SpectralField, U: PotentialSpec) -> SpectralField:
    return _field(_ops(y, U).D(y.coeffs), y.domain)


def apply_R0(y: SpectralField) -> SpectralField:
    """R0 y = -Delta_v y + v.grad_v y, diagonal |k|."""
    return _field(total_degree(y.domain) * y.coeffs, y.domain)


def apply_R(y: SpectralField) -> SpectralField:
    """R = R0 + I, diagonal 1 + |k|."""
    return _field((1.0 + total_degree(y.domain)) * y.coeffs, y.domain)


def solve_R(g: SpectralField) -> SpectralField:
    return _field(g.coeffs / (1.0 + total_degree(g.domain)), g.domain)


def apply_R_sqrt(y: SpectralField) -> SpectralField:
    return _field(np.sqrt(1.0 + total_degree(y.domain)) * y.coeffs, y.domain)


def apply_R_inv_sqrt(y: SpectralField) -> SpectralField:
    return _field(y.coeffs / np.sqrt(1.0 + total_degree(y.domain)), y.domain)


def apply_h1(y: SpectralField, U: PotentialSpec) -> SpectralField:
    return _field(_ops(y, U).h1(y.coeffs), y.domain)


def apply_h2(y: SpectralField, U: PotentialSpec) -> SpectralField:
    return _field(_ops(y, U).h2(y.coeffs), y.domain)


def apply_N(y: SpectralField, alpha: ControlShape) -> SpectralField:
    if y.domain != alpha.domain:
        raise ValueError("field and alpha live on different domains")
    out = np.zeros_like(y.coeffs)
    for i in range(y.domain.d):
        out += dealiased_product(alpha.coeffs[i], -raise_v(y.coeffs, y.domain, i), y.domain)
    return _field(out, y.domain)


def make_B(alpha: ControlShape) -> SpectralField:
    """B = -alpha.v, stored on the k = e_i slices."""
    domain = alpha.domain
    out = np.zeros(domain.shape, dtype=complex)
    for i in range(domain.d):
        out[unit_index(domain, i)] = -alpha.coeffs[i]
    return _field(out, domain)


def assemble_rhs(
    y: SpectralField,
    u: float,
    U: PotentialSpec,
    alpha: ControlShape,
    nonlinear: bool = True,
    control: bool = True,
) -> SpectralField:
    """Full right-hand side A y + D y - h1(y) - h2(y) + u N y + B u.
    组装完整右端项。

    Args:
        y: Current state (当前状态)
        u: Scalar control value (标量控制)
        U: Communication potential (通讯势函数)
        alpha: Control profile (控制分布)
        nonlinear: Include h1 and h2 (是否包含非线性项)
        control: Include N and B (是否包含控制项)
    """
    ops = _ops(y, U, alpha)
    return _field(ops.rhs(y.coeffs, u, nonlinear=nonlinear, control=control), y.domain)

