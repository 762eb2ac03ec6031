"""Transition densities of compound Poisson and jump-diffusion processes.

Series routes sum Poisson-weighted n-fold jump laws (optionally smeared by the
Gaussian diffusion).  Spectral routes invert the Kolmogorov-Feller propagator
instead and serve as the independent check of the series.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from .errors import ConvergenceError, CoverageError, ResourceError, ValidationError
from .grid_fourier import Grid1D, GridFunction, integrate, inverse_transform
from .jump_laws import (
    Discrete,
    Exponential,
    Erlang,
    JumpLaw,
    Normal,
    convolve_law,
    deposit_atoms,
    sample_density,
    _merge_atoms,
)
from . import kf_solver


@dataclass(frozen=True)
class SeriesTruncation:
    tail_tolerance: float = 1e-12
    max_terms: int = 200
    min_terms: int = 0

    def __post_init__(self):
        if not self.tail_tolerance > 0 or self.max_terms < 1:
            raise ValidationError("tail_tolerance must be positive and max_terms >= 1")
        if not 0 <= self.min_terms <= self.max_terms:
            raise ValidationError("min_terms must lie in [0, max_terms]")

    def terms(self, mean: float):
        """Smallest ``N >= min_terms`` with Poisson(mean) tail beyond ``N`` below tolerance, and that tail."""
        if mean == 0:
            return 0, 0.0
        n = np.arange(self.max_terms)
        tails = stats.poisson.sf(n, mean)
        ok = np.flatnonzero((tails < self.tail_tolerance) & (n >= self.min_terms))
        if not ok.size:
            raise ConvergenceError(
                f"Poisson({mean:g}) tail does not fall below {self.tail_tolerance:g} within {self.max_terms} terms"
            )
        return int(ok[0]), float(tails[ok[0]])


@dataclass(frozen=True)
class JumpDiffusionParams:
    """``xi_t = gamma t + sigma W_t + sum_{i <= N_t} xi_i`` with ``N`` Poisson(intensity)."""

    gamma: float
    sigma: float
    intensity: float
    law: JumpLaw

    def __post_init__(self):
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be non-negative, got {self.sigma}")
        if not (self.intensity >= 0 and np.isfinite(self.intensity)):
            raise ValidationError(f"intensity must be non-negative, got {self.intensity}")


@dataclass(frozen=True)
class DensityGrid:
    """A sampled density: absolutely continuous part on the grid plus point masses.

    ``breaks`` records jump discontinuities of the continuous part as
    ``(position, left_limit, right_limit)`` with the position in node-index
    units; when it is a node the stored value there is the midpoint.
    """

    grid: Grid1D
    values: np.ndarray
    atom_locs: np.ndarray = field(default_factory=lambda: np.empty(0))
    atom_masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    breaks: tuple = ()
    n_terms: int = 0
    tail_mass: float = 0.0
    route: str = "series"
    notes: tuple = ()

    def __post_init__(self):
        for name in ("values", "atom_locs", "atom_masses"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.values.shape != (self.grid.n_points,):
            raise ValidationError("density values do not match the grid")

    @property
    def continuous(self) -> GridFunction:
        return GridFunction(self.grid, self.values)

    def continuous_mass(self) -> float:
        return integrate(self.continuous, self.breaks)

    def total_mass(self) -> float:
        return self.continuous_mass() + float(np.sum(self.atom_masses))

    def atom_column(self) -> np.ndarray:
        """Point masses gathered at their nearest nodes."""
        col = np.zeros(self.grid.n_points)
        if self.atom_locs.size:
            deposit_atoms(col, self.grid, self.atom_locs, self.atom_masses)
        return col * self.grid.spacing

    def rasterized(self) -> GridFunction:
        return GridFunction(self.grid, self.values + self.atom_column() / self.grid.spacing)

    def scaled(self, factor: float) -> "DensityGrid":
        return DensityGrid(
            self.grid, factor * self.values, self.atom_locs, factor * self.atom_masses,
            tuple((i, factor * lo, factor * hi) for i, lo, hi in self.breaks),
            self.n_terms, self.tail_mass, self.route, self.notes,
        )


def _poisson_weights(mean, n_max):
    return stats.poisson.pmf(np.arange(n_max + 1), mean)


def _check_times(s, t):
    if not t > s:
        raise ValidationError(f"need t > s, got s={s}, t={t}")
    return t - s


def _boundary_breaks(grid, law, shift, right_limit, values):
    """Record the support-edge jump of the continuous part.

    On a node the stored value becomes the midpoint; between nodes the break
    position is fractional and the node samples are left as they are.
    """
    bj = law.boundary_jump()
    pos = None if bj is None else _break_position(grid, bj[0] + shift)
    if pos is None:
        return ()
    if isinstance(pos, int):
        values[pos] = 0.5 * right_limit
    return ((pos, 0.0, right_limit),)


def _break_position(grid, loc):
    """Node index of ``loc`` if it is a node, its fractional index if inside the grid, else None."""
    pos = (loc - grid.x_min) / grid.spacing
    if not 0 <= pos <= grid.n_points - 1:
        return None
    idx = int(np.rint(pos))
    return idx if abs(pos - idx) <= 1e-9 else float(pos)


def compound_poisson_density(intensity: float, law: JumpLaw, s: float, t: float, grid: Grid1D,
                             trunc: SeriesTruncation = SeriesTruncation(), x: float = 0.0) -> DensityGrid:
    """Poisson-weighted series of n-fold jump laws, as a function of ``y`` given ``x``."""
    tau = _check_times(s, t)
    mean = intensity * tau
    n_max, tail = trunc.terms(mean)
    w = _poisson_weights(mean, n_max)
    values = np.zeros(grid.n_points)
    locs, masses = [np.array([x])], [np.array([w[0]])]
    right = 0.0
    for n in range(1, n_max + 1):
        law_n = convolve_law(law, n)
        if law.is_discrete:
            a_l, a_m = law_n.atoms()
            locs.append(a_l + x)
            masses.append(w[n] * a_m)
        else:
            values += w[n] * law_n.pdf(grid.nodes - x)
            bj = law_n.boundary_jump()
            if bj is not None:
                right += w[n] * bj[1]
    atom_l, atom_m = _merge_atoms(np.concatenate(locs), np.concatenate(masses))
    outside = ~grid.covers(atom_l)
    if np.sum(atom_m[outside]) > trunc.tail_tolerance:
        raise CoverageError(f"atoms of mass {np.sum(atom_m[outside]):.3e} fall outside the grid")
    atom_l, atom_m = atom_l[~outside], atom_m[~outside]
    breaks = () if law.is_discrete else _boundary_breaks(grid, law, x, right, values)
    return DensityGrid(grid, values, atom_l, atom_m, breaks, n_max, tail, "series")


def compound_poisson_density_spectral(intensity: float, law: JumpLaw, s: float, t: float, grid: Grid1D,
                                      x: float = 0.0, singular_terms: int = 4) -> DensityGrid:
    """Same density by inverting the jump propagator.

    The ``n = 0`` point mass is removed in Fourier space.  For laws whose density
    jumps at the edge of its support, the first ``singular_terms`` convolution
    powers are also removed there (they carry the non-smooth behaviour that a
    truncated inversion cannot resolve) and added back from their closed forms.
    """
    tau = _check_times(s, t)
    mean = intensity * tau
    prop = kf_solver.jump_propagator(kf_solver.JumpSpec(intensity, law), s, t, grid)
    theta = grid.frequencies
    shift = np.exp(1j * theta * x)
    spectrum = np.conj(prop.multiplier) * shift
    p0 = np.exp(-mean)
    spectrum = spectrum - p0 * shift
    values = np.zeros(grid.n_points)
    breaks = ()
    if law.boundary_jump() is not None and singular_terms:
        phi = law.characteristic_function(theta)
        w = _poisson_weights(mean, singular_terms)
        right = 0.0
        for n in range(1, singular_terms + 1):
            spectrum = spectrum - w[n] * phi**n * shift
            values += sample_density(convolve_law(law, n), _shifted(grid, x), strict=False).values * w[n]
            bj = convolve_law(law, n).boundary_jump()
            if bj is not None:
                right += w[n] * bj[1]
        pos = _break_position(grid, law.boundary_jump()[0] + x)
        breaks = () if pos is None else ((pos, 0.0, right),)
    values = values + inverse_transform(spectrum, grid).values
    return DensityGrid(grid, values, np.array([x]), np.array([p0]), breaks, 0, 0.0, "spectral")


def _shifted(grid: Grid1D, x: float) -> Grid1D:
    return Grid1D(grid.x_min - x, grid.x_max - x, grid.n_points)


def scaled_hh(x, kmax: int) -> np.ndarray:
    """``Hh_k(x) exp(x^2/2)`` for ``k = -1..kmax`` (rows), ``x >= 0``.

    ``Hh_k(x) = (1/k!) int_x^inf (t - x)^k exp(-t^2/2) dt``.  Forward recurrence for
    small ``x``, ratio (Miller) recurrence otherwise.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty((kmax + 2, x.size))
    e0 = np.sqrt(np.pi / 2) * special.erfcx(x / np.sqrt(2))
    out[0], out[1] = 1.0, e0
    small = x < 0.5
    if small.any():
        xs = x[small]
        em1, ek = np.ones_like(xs), e0[small]
        for k in range(1, kmax + 1):
            em1, ek = ek, (em1 - xs * ek) / k
            out[k + 1, small] = ek
    big = ~small
    if big.any() and kmax >= 1:
        xb = x[big]
        start = kmax + int(np.ceil((25 / xb.min() + np.sqrt(2 * kmax + 2)) ** 2 / 2)) + 10
        ratios = np.empty((kmax + 1, xb.size))
        r = np.zeros_like(xb)
        for k in range(start + 1, 1, -1):
            r = 1.0 / (xb + k * r)
            if k - 1 <= kmax:
                ratios[k - 1] = r
        ek = e0[big]
        for k in range(1, kmax + 1):
            ek = ek * ratios[k]
            out[k + 1, big] = ek
    return out


def gauss_erlang_pdf(z, n: int, rate: float, s: float, hh=None) -> np.ndarray:
    """Density of ``N(0, s^2) + Erlang(n, rate)`` at ``z`` (``n >= 1``)."""
    z = np.asarray(z, dtype=float)
    k = n - 1
    a = rate * s - z / s
    pos = a >= 0
    if hh is None:
        hh = scaled_hh(np.abs(a), k)
    ek = hh[k + 1]
    gauss = np.exp(-0.5 * (z / s) ** 2)
    out = np.empty_like(z)
    pref = np.exp(n * np.log(rate) + k * np.log(s))
    out[pos] = pref * gauss[pos] * ek[pos] / np.sqrt(2 * np.pi)
    neg = ~pos
    if neg.any():
        b = -a[neg]
        poly = np.zeros_like(b)
        for j in range(0, k + 1, 2):
            poly += b ** (k - j) / (2.0 ** (j // 2) * special.factorial(j // 2) * special.factorial(k - j))
        expo = np.exp(-rate * z[neg] + 0.5 * (rate * s) ** 2)
        out[neg] = pref * (expo * poly - (-1) ** k * gauss[neg] * ek[neg] / np.sqrt(2 * np.pi))
    return np.maximum(out, 0.0)


def _gauss_pdf(z, var):
    return np.exp(-0.5 * z * z / var) / np.sqrt(2 * np.pi * var)


MIXTURE_ATOM_LIMIT = 50_000


def mixture_atoms(law: JumpLaw, w):
    """Atoms of ``sum_n w[n] P^{*n}``; raises ResourceError past MIXTURE_ATOM_LIMIT."""
    locs, masses = [np.array([0.0])], [np.array([w[0]])]
    base_l, base_p = law.atoms()
    cur_l, cur_p = np.array([0.0]), np.array([1.0])
    for n in range(1, w.size):
        if isinstance(law, Discrete):
            cur_l, cur_p = _merge_atoms(np.add.outer(cur_l, base_l).ravel(), np.multiply.outer(cur_p, base_p).ravel())
        else:
            cur_l, cur_p = convolve_law(law, n).atoms()
        if cur_l.size > MIXTURE_ATOM_LIMIT:
            raise ResourceError(f"jump mixture needs more than {MIXTURE_ATOM_LIMIT} atoms; use the spectral route")
        locs.append(cur_l)
        masses.append(w[n] * cur_p)
    return _merge_atoms(np.concatenate(locs), np.concatenate(masses))


def mixture_pdf(params: JumpDiffusionParams, tau: float, z, trunc: SeriesTruncation = SeriesTruncation()):
    """Pointwise series density of the increment ``xi_{s+tau} - xi_s`` at ``z``.

    Returns ``(values, n_terms, tail_mass)``.  Requires ``sigma > 0`` and a law
    with a closed-form Gaussian mixture (discrete laws, Normal, Exponential/Erlang).
    """
    z = np.asarray(z, dtype=float)
    var = params.sigma**2 * tau
    if var <= 0:
        raise ValidationError("mixture density needs sigma > 0")
    mean = params.intensity * tau
    n_max, tail = trunc.terms(mean)
    w = _poisson_weights(mean, n_max)
    zc = z - params.gamma * tau
    law = params.law
    if law.is_discrete:
        locs, masses = mixture_atoms(law, w)
        keep = masses > 1e-300
        locs, masses = locs[keep], masses[keep]
        out = np.zeros_like(zc)
        for c in range(0, locs.size, 64):
            out += _gauss_pdf(zc[..., None] - locs[c:c + 64], var) @ masses[c:c + 64]
        return out, n_max, tail
    if isinstance(law, Normal):
        out = np.zeros_like(zc)
        for n in range(n_max + 1):
            out += w[n] * _gauss_pdf(zc - n * law.mean, var + n * law.std**2)
        return out, n_max, tail
    if isinstance(law, (Exponential, Erlang)):
        base_n = 1 if isinstance(law, Exponential) else law.n
        s = np.sqrt(var)
        out = w[0] * _gauss_pdf(zc, var)
        if n_max:
            flat = zc.ravel()
            hh = scaled_hh(np.abs(law.rate * s - flat / s), n_max * base_n)
            acc = np.zeros_like(flat)
            for n in range(1, n_max + 1):
                acc += w[n] * gauss_erlang_pdf(flat, n * base_n, law.rate, s, hh)
            out = out + acc.reshape(zc.shape)
        return out, n_max, tail
    raise ValidationError(f"no closed-form mixture for {type(law).__name__}; use the spectral route")


def has_mixture(law: JumpLaw) -> bool:
    return law.is_discrete or isinstance(law, (Normal, Exponential, Erlang))


def jump_diffusion_density(params: JumpDiffusionParams, s: float, t: float, grid: Grid1D,
                           trunc: SeriesTruncation = SeriesTruncation(), x: float = 0.0) -> DensityGrid:
    """Density of ``xi_t`` given ``xi_s = x`` sampled on ``grid``.

    Gaussian mixtures are evaluated in closed form.  Laws without one fall back
    to spectral inversion of the full propagator.  A diffusion narrower than the
    grid spacing cannot be sampled; it is then treated as a point mass and the
    compound Poisson series (shifted by the drift) is returned, which without
    jumps is a single atom.
    """
    tau = _check_times(s, t)
    sd = params.sigma * np.sqrt(tau)
    if sd >= grid.spacing:
        if not has_mixture(params.law) and params.intensity > 0:
            return _spectral_jump_diffusion(params, tau, grid, x)
        try:
            values, n_max, tail = mixture_pdf(params, tau, grid.nodes - x, trunc)
        except ResourceError:
            return _spectral_jump_diffusion(params, tau, grid, x)
        return DensityGrid(grid, values, n_terms=n_max, tail_mass=tail, route="series")
    cp = compound_poisson_density(params.intensity, params.law, s, t, grid, trunc, x + params.gamma * tau)
    note = f"diffusion sd {sd:.3g} below grid spacing {grid.spacing:.3g}; treated as a point mass"
    return DensityGrid(grid, cp.values, cp.atom_locs, cp.atom_masses, cp.breaks, cp.n_terms, cp.tail_mass,
                       "series", (note,))


def default_density_grid(params: JumpDiffusionParams, tau: float, x: float = 0.0, n_points: int = 4096,
                         trunc: SeriesTruncation = SeriesTruncation(), n_std: float = 12.0) -> Grid1D:
    """Dyadic grid around ``x`` wide enough for the diffusion and the kept jump terms.

    The half width is the larger of ``n_std`` standard deviations of the
    increment and the jump reach (largest kept jump count times the mean jump
    plus eight standard deviations).  Being dyadic, integer offsets from an
    integer ``x`` fall on nodes.
    """
    m1, m2 = params.law.moments()
    mean = params.intensity * tau
    var = params.sigma**2 * tau + mean * m2
    n_max = trunc.terms(mean)[0] if mean > 0 else 0
    spread = params.sigma**2 * tau + n_max * max(m2 - m1 * m1, 0.0)
    reach = n_max * abs(m1) + 8 * np.sqrt(spread)
    half = max(n_std * np.sqrt(var), reach) + abs(params.gamma) * tau
    if not half > 0:
        raise ValidationError("degenerate increment: no diffusion and no jumps")
    return Grid1D.centered(x, half, n_points, dyadic=True)


def _spectral_jump_diffusion(params, tau, grid, x):
    coefs = kf_solver.DiffusionCoefficients(params.gamma, params.sigma**2)
    jumps = kf_solver.JumpSpec(params.intensity, params.law)
    prop = kf_solver.full_generator_propagator(coefs, jumps, 0.0, tau, grid)
    spectrum = np.conj(prop.multiplier) * np.exp(1j * grid.frequencies * x)
    values = inverse_transform(spectrum, grid).values
    return DensityGrid(grid, values, route="spectral")


def fundamental_solution(model, s: float, T: float, grid: Grid1D,
                         trunc: SeriesTruncation = SeriesTruncation()) -> DensityGrid:
    """Discounted risk-neutral transition density of ``log S_T`` given ``log S_s = log(spot)``."""
    tau = _check_times(s, T)
    params = model.log_price_params(s, T)
    dens = jump_diffusion_density(params, 0.0, tau, grid, trunc, x=np.log(model.spot))
    return dens.scaled(np.exp(-model.rate * tau))
