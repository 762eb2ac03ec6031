"""Split spectral solution of the one-dimensional Kolmogorov-Feller terminal problem.

A :class:`Propagator` stores the Fourier multiplier ``m`` of the backward
solution operator over ``[s, T]``::

    u(s, .) = F^-1[ m * F[phi] ],     u(s, x) = E[phi(x + X_T - X_s)]

With the transform convention of :mod:`kfprice.grid_fourier`,
``m(theta) = E[exp(-i theta (X_T - X_s))]``, i.e. the conjugate of the
increment's characteristic function.  For the diffusion part this is
``exp(-1/2 int A dt theta^2 - i int a dt theta)``.  ``conj(m)`` is the
forward (density-propagating) multiplier used by :func:`propagate_density`
and :func:`increment_density`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate as sp_integrate

from .errors import ValidationError
from .grid_fourier import (
    Grid1D,
    GridFunction,
    check_edges,
    forward_transform,
    inverse_transform,
)
from .jump_laws import JumpLaw

Coefficient = Union[float, Callable[[float], float]]

QUAD_RTOL = 1e-12


def _time_integral(coef: Coefficient, s: float, T: float) -> float:
    if callable(coef):
        value, _ = sp_integrate.quad(coef, s, T, epsabs=0.0, epsrel=QUAD_RTOL, limit=200)
        return value
    return float(coef) * (T - s)


def _on_times(coef: Coefficient, ts) -> np.ndarray:
    return np.array([coef(t) for t in ts], dtype=float) if callable(coef) else np.full(1, float(coef))


@dataclass(frozen=True)
class DiffusionCoefficients:
    """Drift ``a(t)`` and variance rate ``A(t)``; constants or callables."""

    drift: Coefficient = 0.0
    variance_rate: Coefficient = 1.0
    ellipticity: Optional[float] = None

    def validate(self, s: float, T: float):
        ts = np.linspace(s, T, 65)
        A = _on_times(self.variance_rate, ts)
        a = _on_times(self.drift, ts)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(a))):
            raise ValidationError("diffusion coefficients must be finite on [s, T]")
        floor = self.ellipticity if self.ellipticity is not None else 0.0
        if floor < 0 or np.any(A <= 0) or np.any(A < floor):
            raise ValidationError(f"variance rate is not uniformly elliptic (min {A.min():.3e}, required >= {floor})")

    def integrals(self, s: float, T: float):
        """``(int_s^T a dt, int_s^T A dt)``."""
        return _time_integral(self.drift, s, T), _time_integral(self.variance_rate, s, T)


@dataclass(frozen=True)
class JumpSpec:
    """Levy measure ``intensity * law`` with jump transform ``c`` (identity if None)."""

    intensity: float
    law: JumpLaw
    transform: Optional[Callable] = None

    def __post_init__(self):
        if not (self.intensity >= 0 and np.isfinite(self.intensity)):
            raise ValidationError(f"jump intensity must be non-negative, got {self.intensity}")

    def _rule(self):
        z, w = self.law.quadrature(256) if not self.law.is_discrete else self.law.atoms()
        return np.asarray(self.transform(z), dtype=float), w

    def characteristic_function(self, theta):
        """``E[exp(i theta c(Z))]``."""
        if self.transform is None:
            return self.law.characteristic_function(theta)
        c, w = self._rule()
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.empty(t.shape, dtype=complex)
        for k in range(0, t.size, 256):
            out[k:k + 256] = np.exp(1j * np.multiply.outer(t[k:k + 256], c)) @ w
        return out.reshape(np.shape(theta))

    def mean_abs_transform(self) -> float:
        if self.transform is None:
            if self.law.is_discrete:
                z, w = self.law.atoms()
                return float(w @ np.abs(z))
            z, w = self.law.quadrature(256)
            return float(w @ np.abs(z))
        c, w = self._rule()
        return float(w @ np.abs(c))

    def mean_transform(self) -> float:
        if self.transform is None:
            return self.law.moments()[0]
        c, w = self._rule()
        return float(w @ c)


@dataclass(frozen=True)
class Propagator:
    grid: Grid1D
    multiplier: np.ndarray
    horizon: tuple

    def __post_init__(self):
        m = np.array(self.multiplier, dtype=complex)
        if m.shape != (self.grid.n_points,):
            raise ValidationError("multiplier length does not match the grid")
        m.setflags(write=False)
        object.__setattr__(self, "multiplier", m)
        object.__setattr__(self, "horizon", (float(self.horizon[0]), float(self.horizon[1])))

    @classmethod
    def identity(cls, grid: Grid1D, s: float, T: float):
        return cls(grid, np.ones(grid.n_points, dtype=complex), (s, T))


def _check_horizon(s, T, allow_equal=True):
    if not (0 <= s <= T) or (not allow_equal and s == T):
        raise ValidationError(f"need 0 <= s < T, got s={s}, T={T}")


def diffusion_exponent(coefs: DiffusionCoefficients, s: float, T: float, theta):
    """Log of the backward diffusion multiplier."""
    int_a, int_A = coefs.integrals(s, T)
    return -0.5 * int_A * theta**2 - 1j * int_a * theta


def jump_exponent(jumps: JumpSpec, s: float, T: float, theta, compensated: bool = False):
    """Log of the backward jump multiplier ``(T-s) lam E[e^{-i theta c} - 1 + i theta c 1{comp}]``."""
    if compensated and not np.isfinite(jumps.mean_abs_transform()):
        raise ValidationError("compensator integral diverges")
    expo = np.conj(jumps.characteristic_function(theta)) - 1.0
    if compensated:
        expo = expo + 1j * theta * jumps.mean_transform()
    return (T - s) * jumps.intensity * expo


def diffusion_propagator(coefs: DiffusionCoefficients, s: float, T: float, grid: Grid1D) -> Propagator:
    _check_horizon(s, T)
    if s == T:
        return Propagator.identity(grid, s, T)
    coefs.validate(s, T)
    return Propagator(grid, np.exp(diffusion_exponent(coefs, s, T, grid.frequencies)), (s, T))


def jump_propagator(jumps: JumpSpec, s: float, T: float, grid: Grid1D, compensated: bool = False) -> Propagator:
    _check_horizon(s, T)
    if s == T:
        return Propagator.identity(grid, s, T)
    return Propagator(grid, np.exp(jump_exponent(jumps, s, T, grid.frequencies, compensated)), (s, T))


def full_generator_propagator(coefs, jumps, s, T, grid, compensated=False) -> Propagator:
    """Unsplit multiplier ``exp{diffusion exponent + jump exponent}``."""
    _check_horizon(s, T)
    theta = grid.frequencies
    expo = diffusion_exponent(coefs, s, T, theta) + jump_exponent(jumps, s, T, theta, compensated)
    return Propagator(grid, np.exp(expo), (s, T))


def _product(m1, m2):
    """Complex product from separate real operations, so swapping the factors is bit-exact."""
    a, b, c, d = m1.real, m1.imag, m2.real, m2.imag
    return (a * c - b * d) + 1j * (a * d + b * c)


def compose(p1: Propagator, p2: Propagator) -> Propagator:
    """Convolution of the two solutions in x, i.e. product of multipliers."""
    if p1.grid != p2.grid:
        raise ValidationError("cannot compose propagators on different grids")
    if p1.horizon != p2.horizon:
        raise ValidationError(f"cannot compose propagators with horizons {p1.horizon} and {p2.horizon}")
    return Propagator(p1.grid, _product(p1.multiplier, p2.multiplier), p1.horizon)


def chain(p_early: Propagator, p_late: Propagator) -> Propagator:
    """Propagator over ``[s, T]`` from ones over ``[s, u]`` and ``[u, T]``."""
    if p_early.grid != p_late.grid or p_early.horizon[1] != p_late.horizon[0]:
        raise ValidationError("chained propagators must share the grid and meet in time")
    horizon = (p_early.horizon[0], p_late.horizon[1])
    return Propagator(p_early.grid, _product(p_early.multiplier, p_late.multiplier), horizon)


def solve_terminal(p: Propagator, phi: GridFunction, strict: bool = True) -> GridFunction:
    """``u(s, .)`` from terminal data ``u(T, .) = phi``."""
    if phi.grid != p.grid:
        raise ValidationError("terminal data and propagator use different grids")
    check_edges(phi, strict, "terminal data")
    if np.all(p.multiplier == 1):
        return phi
    return inverse_transform(p.multiplier * forward_transform(phi), p.grid)


def propagate_density(p: Propagator, density: GridFunction, strict: bool = True) -> GridFunction:
    """Density of ``X_T`` when ``X_s`` has ``density`` (forward equation)."""
    if density.grid != p.grid:
        raise ValidationError("density and propagator use different grids")
    check_edges(density, strict, "initial density")
    if np.all(p.multiplier == 1):
        return density
    return inverse_transform(np.conj(p.multiplier) * forward_transform(density), p.grid)


def increment_density(p: Propagator, atoms=()) -> GridFunction:
    """Density of ``X_T - X_s`` on the grid, by direct inversion of the multiplier.

    ``atoms`` lists known point masses ``(location, mass)`` of the increment law;
    they are removed in Fourier space before inversion so that only the
    absolutely continuous part is returned.
    """
    spectrum = np.conj(p.multiplier).copy()
    theta = p.grid.frequencies
    for loc, mass in atoms:
        spectrum -= mass * np.exp(1j * theta * loc)
    return inverse_transform(spectrum, p.grid)
