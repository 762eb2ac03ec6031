"""Uniform grids, continuous-convention Fourier transforms, convolution and quadrature.

Transform convention used everywhere in the package::

    fhat(theta) = integral exp(+i theta x) f(x) dx
    f(x)        = (2 pi)^-1 integral exp(-i theta x) fhat(theta) d theta

so that ``fhat`` of a probability density is its characteristic function.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import ConfigurationError, NumericalConsistencyError, WrapAroundError, ValidationError

# Sign of the exponent in the forward transform.  Multipliers in kf_solver rely on it.
FORWARD_SIGN = 1

IMAG_RESIDUAL_TOL = 1e-8
EDGE_DECAY_TOL = 1e-12


def is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class Grid1D:
    """Periodic uniform grid ``x_k = x_min + k * spacing``, ``k = 0..n_points-1``."""

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not isinstance(self.n_points, (int, np.integer)) or not is_power_of_two(int(self.n_points)):
            raise ConfigurationError(f"n_points must be a power of two, got {self.n_points!r}")
        if self.n_points < 8:
            raise ConfigurationError(f"n_points must be at least 8, got {self.n_points}")
        if not (np.isfinite(self.x_min) and np.isfinite(self.x_max)) or self.x_max <= self.x_min:
            raise ConfigurationError(f"need finite x_max > x_min, got [{self.x_min}, {self.x_max}]")
        object.__setattr__(self, "n_points", int(self.n_points))
        object.__setattr__(self, "x_min", float(self.x_min))
        object.__setattr__(self, "x_max", float(self.x_max))

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / self.n_points

    @property
    def nodes(self) -> np.ndarray:
        return self.x_min + self.spacing * np.arange(self.n_points)

    @property
    def frequencies(self) -> np.ndarray:
        """Conjugate angular frequencies in FFT order."""
        return 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.spacing)

    @property
    def frequency_spacing(self) -> float:
        return 2.0 * np.pi / (self.n_points * self.spacing)

    def nearest_index(self, x):
        """Index of the node nearest to ``x`` (no range check)."""
        return np.rint((np.asarray(x, dtype=float) - self.x_min) / self.spacing).astype(np.int64)

    def covers(self, x) -> np.ndarray:
        """True where ``x`` rounds to a node inside the grid."""
        idx = self.nearest_index(x)
        return (idx >= 0) & (idx < self.n_points)

    @classmethod
    def centered(cls, center: float, half_width: float, n_points: int = 4096, dyadic: bool = False):
        """Grid on ``[center - half_width, center + half_width)``.

        With ``dyadic=True`` the half width is rounded up to a power of two and the
        center snapped to a node multiple, which puts every integer (and every dyadic
        rational coarser than the spacing) exactly on a node when ``center`` is one.
        """
        if half_width <= 0 or not np.isfinite(half_width):
            raise ConfigurationError(f"half_width must be positive and finite, got {half_width}")
        if dyadic:
            half_width = 2.0 ** np.ceil(np.log2(half_width))
            h = 2.0 * half_width / n_points
            center = h * np.rint(center / h)
        return cls(center - half_width, center + half_width, n_points)


def default_pricing_grid(log_spot: float, variance: float, n_points: int = 4096, n_std: float = 12.0) -> Grid1D:
    """Log-price grid of ``n_std`` standard deviations either side of ``log_spot``.

    ``variance`` is the total log-price variance over the horizon,
    ``sigma^2 tau + lambda tau m2`` with ``m2`` the second raw moment of the log-jump.
    """
    return Grid1D.centered(log_spot, n_std * np.sqrt(variance), n_points)


@dataclass(frozen=True)
class GridFunction:
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.n_points,):
            raise ValidationError(
                f"values has shape {values.shape}, grid expects ({self.grid.n_points},)"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("grid function values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(cls, grid: Grid1D, func):
        return cls(grid, func(grid.nodes))

    @classmethod
    def zeros(cls, grid: Grid1D):
        return cls(grid, np.zeros(grid.n_points))

    @classmethod
    def delta(cls, grid: Grid1D, at: float = 0.0, mass: float = 1.0):
        """Discrete Dirac mass: ``mass / spacing`` at the node nearest ``at``."""
        idx = int(grid.nearest_index(at))
        if not 0 <= idx < grid.n_points:
            raise ValidationError(f"delta location {at} outside grid")
        values = np.zeros(grid.n_points)
        values[idx] = mass / grid.spacing
        return cls(grid, values)

    def __add__(self, other):
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return GridFunction(self.grid, self.values - other.values)

    def scaled(self, factor: float):
        return GridFunction(self.grid, factor * self.values)


def _check_same_grid(f, g):
    if f.grid != g.grid:
        raise ValidationError(f"grid mismatch: {f.grid} vs {g.grid}")


def _phase(grid: Grid1D) -> np.ndarray:
    return np.exp(1j * FORWARD_SIGN * grid.frequencies * grid.x_min)


def forward_transform(f: GridFunction) -> np.ndarray:
    """Riemann-sum approximation of ``fhat(theta_j)`` on ``grid.frequencies``."""
    grid = f.grid
    n, h = grid.n_points, grid.spacing
    # numpy's ifft carries exp(+2 pi i jk/n)/n, i.e. our forward kernel up to n.
    return h * n * np.fft.ifft(f.values) * _phase(grid)


def inverse_transform(spectrum, grid: Grid1D) -> GridFunction:
    """Exact discrete inverse of :func:`forward_transform`."""
    spectrum = np.asarray(spectrum, dtype=complex)
    if spectrum.shape != (grid.n_points,):
        raise ValidationError(
            f"spectrum length {spectrum.shape} does not match grid ({grid.n_points},)"
        )
    values = np.fft.fft(spectrum * np.conj(_phase(grid))) / (grid.n_points * grid.spacing)
    scale = np.max(np.abs(values)) if values.size else 0.0
    residual = np.max(np.abs(values.imag)) if values.size else 0.0
    if scale > 0 and residual > IMAG_RESIDUAL_TOL * scale:
        raise NumericalConsistencyError(
            f"inverse transform has imaginary residual {residual:.3e} "
            f"(max magnitude {scale:.3e}); multiplier is not Hermitian"
        )
    return GridFunction(grid, values.real)


def edge_excess(f: GridFunction, tol: float = EDGE_DECAY_TOL) -> float:
    """Largest edge magnitude relative to the peak, or 0 if below ``tol``."""
    v = np.abs(f.values)
    peak = v.max()
    if peak == 0:
        return 0.0
    edge = max(v[0], v[-1]) / peak
    return edge if edge > tol else 0.0


def check_edges(f: GridFunction, strict: bool = True, what: str = "function", tol: float = EDGE_DECAY_TOL):
    excess = edge_excess(f, tol)
    if excess:
        msg = f"{what} does not decay at grid edges (edge/peak = {excess:.3e} > {tol:g}); wrap-around likely"
        if strict:
            raise WrapAroundError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def convolve(f: GridFunction, g: GridFunction, strict: bool = True) -> GridFunction:
    """Approximate ``(f * g)(x) = integral f(x - y) g(y) dy`` on the shared grid."""
    _check_same_grid(f, g)
    check_edges(f, strict, "first operand")
    check_edges(g, strict, "second operand")
    return inverse_transform(forward_transform(f) * forward_transform(g), f.grid)


def integrate(f: GridFunction, breaks=()) -> float:
    """Trapezoid rule over the grid span.

    ``breaks`` is an optional sequence of ``(position, left_limit, right_limit)``
    describing jump discontinuities, with ``position`` in node-index units
    (``(x - x_min) / spacing``, an integer when the jump sits on a node).  With
    breaks the grid is split there and each smooth piece integrated with a
    Gregory rule that is exact for polynomials of degree five, using the
    one-sided limits as the piece end values.  A piece ending between nodes
    gets its partial cell from the polynomial through the limit and the four
    nearest nodes of the piece.
    """
    values = f.values
    h = f.grid.spacing
    if not breaks:
        return float(h * (values.sum() - 0.5 * (values[0] + values[-1])))
    total = 0.0
    start, start_value = 0.0, values[0]
    for pos, left, right in sorted(breaks, key=lambda b: b[0]):
        total += _piece(values, start, start_value, float(pos), left)
        start, start_value = float(pos), right
    total += _piece(values, start, start_value, float(values.size - 1), values[-1])
    return h * total


def _piece(values, a, va, b, vb):
    """Integral in index units over ``[a, b]`` of a smooth piece with end values ``va``, ``vb``."""
    ja, jb = int(np.ceil(a)), int(np.floor(b))
    if jb < ja:  # no node inside: linear through the two limits
        return 0.5 * (va + vb) * (b - a)
    nodes = np.array(values[ja: jb + 1], dtype=float)
    if ja == a:
        nodes[0] = va
    if jb == b:
        nodes[-1] = vb
    total = float(gregory_weights(nodes.size) @ nodes) if nodes.size > 1 else 0.0
    if ja > a:
        xs = np.r_[a, ja + np.arange(min(4, nodes.size))]
        total += _poly_integral(xs, np.r_[va, nodes[: xs.size - 1]], a, ja)
    if jb < b:
        xs = np.r_[jb - np.arange(min(4, nodes.size))[::-1], b]
        total += _poly_integral(xs, np.r_[nodes[nodes.size - xs.size + 1:], vb], jb, b)
    return total


def _poly_integral(xs, ys, lo, hi):
    coef = np.polynomial.polynomial.polyfit(xs - lo, ys, xs.size - 1)
    return float(np.polynomial.polynomial.polyval(hi - lo, np.polynomial.polynomial.polyint(coef)))


_GREGORY = (1 / 12, 1 / 24, 19 / 720, 3 / 160, 863 / 60480)


def gregory_weights(n_nodes: int, order: int = 5) -> np.ndarray:
    """Unit-spacing quadrature weights: trapezoid plus Gregory end corrections.

    Exact for polynomials of degree ``order`` when ``n_nodes > 2 * order``;
    falls back to lower order on short pieces.
    """
    n = n_nodes - 1
    if n < 1:
        return np.zeros(max(n_nodes, 0))
    w = np.ones(n_nodes)
    w[0] = w[-1] = 0.5
    order = min(order, (n_nodes - 1) // 2)
    for k in range(1, order + 1):
        ck = _GREGORY[k - 1]
        for j in range(k + 1):
            w[n - j] -= ck * comb(k, j) * (-1) ** j
            w[j] -= ck * comb(k, j) * (-1) ** (k - j) * (-1) ** k
    return w


def interpolate(f: GridFunction, x, order: int = 8) -> np.ndarray:
    """Local Lagrange interpolation of ``f`` at points ``x`` inside the grid."""
    grid = f.grid
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = (x - grid.x_min) / grid.spacing
    first = np.clip(np.floor(t).astype(np.int64) - order // 2 + 1, 0, grid.n_points - order)
    out = np.zeros_like(x)
    offsets = np.arange(order)
    idx = first[:, None] + offsets[None, :]
    xs = idx.astype(float)
    ys = f.values[idx]
    for a in range(order):
        basis = np.ones_like(x)
        for b in range(order):
            if a != b:
                basis *= (t - xs[:, b]) / (xs[:, a] - xs[:, b])
        out += basis * ys[:, a]
    return out
