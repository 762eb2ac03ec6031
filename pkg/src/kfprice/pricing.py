"""Option prices under geometric jump-diffusion dynamics.

Risk-neutral log-price::

    log S_T = log S + (r - lam kappa) tau - 1/2 int sigma^2 + int sigma dW + sum log(1 + c(Z_i))

with ``kappa = E[c(Z)]``.  The physical drift and intensity never enter prices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Union

import numpy as np
from scipy import integrate as sp_integrate
from scipy import special

from .errors import CapabilityError, CoverageError, ResolutionError, ValidationError
from .grid_fourier import Grid1D, default_pricing_grid, gregory_weights, interpolate
from .jump_laws import Discrete, JumpLaw, LogOnePlus, Normal, Unit
from .transition_density import (
    DensityGrid,
    JumpDiffusionParams,
    SeriesTruncation,
    has_mixture,
    jump_diffusion_density,
    mixture_pdf,
)

TRANSFORMS = ("exp_minus_one", "identity")

# Relative agreement of the grid's mass and forward with their exact values.
COVERAGE_TOL = 1e-8
# Spectral density values below this fraction of the peak are transform round-off.
SPECTRAL_FLOOR = 1e-13


@dataclass(frozen=True)
class LevyModel:
    """Market model under the pricing measure.

    ``transform`` names the relative jump ``c(z)``: ``exp_minus_one`` (``e^z - 1``,
    so ``z`` is the log-jump) or ``identity`` (``c(z) = z``).  ``physical_drift``
    and ``physical_intensity`` are recorded for completeness only.
    """

    spot: float
    rate: float
    sigma: Union[float, Callable[[float], float]]
    intensity_q: float = 0.0
    law_q: JumpLaw = field(default_factory=lambda: Unit(0.0))
    transform: str = "exp_minus_one"
    physical_drift: Optional[float] = None
    physical_intensity: Optional[float] = None

    def __post_init__(self):
        if not (self.spot > 0 and np.isfinite(self.spot)):
            raise ValidationError(f"spot must be positive, got {self.spot}", "model.spot")
        if not np.isfinite(self.rate):
            raise ValidationError("rate must be finite", "model.rate")
        if not callable(self.sigma) and not (self.sigma > 0 and np.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}", "model.sigma")
        if not (self.intensity_q >= 0 and np.isfinite(self.intensity_q)):
            raise ValidationError(f"intensity must be non-negative, got {self.intensity_q}", "model.intensity_q")
        if self.transform not in TRANSFORMS:
            raise ValidationError(f"transform must be one of {TRANSFORMS}, got {self.transform!r}", "model.transform")
        if self.intensity_q > 0:
            self._check_limited_liability()
            self.jump_mean()

    def _check_limited_liability(self):
        if self.transform == "exp_minus_one":
            return
        if self.law_q.is_discrete:
            low = float(np.min(self.law_q.atoms()[0]))
        else:
            low = self.law_q.support_min()
        if not low > -1:
            raise ValidationError("jump transform must satisfy c(z) > -1 on the law's support", "model.law")

    def c(self, z):
        z = np.asarray(z, dtype=float)
        return np.expm1(z) if self.transform == "exp_minus_one" else z

    def log_jump(self, z):
        """``log(1 + c(z))``."""
        z = np.asarray(z, dtype=float)
        return z if self.transform == "exp_minus_one" else np.log1p(z)

    def jump_mean(self) -> float:
        """``kappa = E[c(Z)]`` under the jump law."""
        if self.transform == "exp_minus_one":
            try:
                return self.law_q.mgf(1.0) - 1.0
            except ValidationError as exc:
                raise ValidationError(f"E[c(Z)] is infinite: {exc}", "model.law") from exc
        return self.law_q.moments()[0]

    def log_jump_law(self) -> JumpLaw:
        if self.transform == "exp_minus_one":
            return self.law_q
        law = self.law_q
        if isinstance(law, Unit):
            return Unit(float(np.log1p(law.a)))
        if law.is_discrete:
            locs, probs = law.atoms()
            return Discrete(tuple(zip(np.log1p(locs), probs / probs.sum())))
        return LogOnePlus(law)

    def integrated_variance(self, t: float, T: float) -> float:
        if callable(self.sigma):
            value, _ = sp_integrate.quad(lambda u: self.sigma(u) ** 2, t, T, epsabs=0.0, epsrel=1e-12, limit=200)
            return value
        return self.sigma**2 * (T - t)

    def log_price_params(self, t: float, T: float) -> JumpDiffusionParams:
        tau = T - t
        var = self.integrated_variance(t, T)
        kappa = self.jump_mean() if self.intensity_q > 0 else 0.0
        gamma = self.rate - self.intensity_q * kappa - 0.5 * var / tau
        law = self.log_jump_law() if self.intensity_q > 0 else Unit(0.0)
        return JumpDiffusionParams(gamma, math.sqrt(var / tau), self.intensity_q, law)

    def log_variance(self, t: float, T: float) -> float:
        """``int sigma^2 + lam tau m2`` with ``m2`` the log-jump second moment."""
        m2 = self.log_jump_law().moments()[1] if self.intensity_q > 0 else 0.0
        return self.integrated_variance(t, T) + self.intensity_q * (T - t) * m2

    def jump_reach(self, t: float, T: float, trunc: SeriesTruncation = SeriesTruncation()) -> float:
        """Distance from ``log S`` beyond which the log-price density is negligible.

        Covers the drift, the largest jump count kept by ``trunc`` and eight
        standard deviations of the remaining spread.
        """
        p = self.log_price_params(t, T)
        tau = T - t
        if self.intensity_q == 0:
            return abs(p.gamma) * tau + 8 * p.sigma * math.sqrt(tau)
        n_max, _ = share_truncation(self, t, T, trunc).terms(self.intensity_q * tau)
        m1, m2 = p.law.moments()
        spread = p.sigma**2 * tau + n_max * max(m2 - m1 * m1, 0.0)
        return abs(p.gamma) * tau + n_max * abs(m1) + 8 * math.sqrt(spread)

    def default_grid(self, t: float, T: float, n_points: int = 4096) -> Grid1D:
        """Twelve log-price standard deviations, widened to the jump reach when that is larger."""
        grid = default_pricing_grid(math.log(self.spot), self.log_variance(t, T), n_points)
        reach = self.jump_reach(t, T)
        if reach > 0.5 * (grid.x_max - grid.x_min):
            grid = Grid1D.centered(math.log(self.spot), reach, n_points)
        return grid


def risk_neutralize(physical_drift: float, model: LevyModel) -> LevyModel:
    """Record the physical drift and return the pricing-measure model.

    The log-price drift becomes ``r - sigma^2/2 - lam kappa`` (see
    :meth:`LevyModel.log_price_params`); ``physical_drift`` does not enter it.
    """
    if not np.isfinite(physical_drift):
        raise ValidationError("physical drift must be finite", "model.physical_drift")
    return replace(model, physical_drift=float(physical_drift))


KINDS = ("call", "put", "digital_call", "down_and_out_call")


@dataclass(frozen=True)
class OptionContract:
    kind: str
    strike: float
    maturity: float
    valuation_time: float = 0.0
    payout: float = 1.0
    barrier: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"contract kind must be one of {KINDS}, got {self.kind!r}", "contract.kind")
        if not (self.strike > 0 and np.isfinite(self.strike)):
            raise ValidationError(f"strike must be positive, got {self.strike}", "contract.strike")
        if not (0 <= self.valuation_time < self.maturity):
            raise ValidationError(
                f"need 0 <= valuation_time < maturity, got {self.valuation_time}, {self.maturity}",
                "contract.maturity",
            )
        if self.kind == "digital_call" and not self.payout > 0:
            raise ValidationError("digital payout must be positive", "contract.payout")
        if self.kind == "down_and_out_call" and not (self.barrier is not None and self.barrier > 0):
            raise ValidationError("down-and-out call needs a positive barrier", "contract.barrier")

    @property
    def tau(self) -> float:
        return self.maturity - self.valuation_time

    def payoff(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "put":
            return np.maximum(self.strike - s, 0.0)
        if self.kind == "digital_call":
            return np.where(s > self.strike, self.payout, 0.0)
        return np.maximum(s - self.strike, 0.0)


@dataclass(frozen=True)
class PriceResult:
    price: float
    route: str
    n_terms: int = 0
    tail_mass: float = 0.0
    knocked_out: bool = False
    notes: tuple = ()


# --- series route -------------------------------------------------------------

def series_capable(model: LevyModel) -> bool:
    if model.intensity_q == 0:
        return True
    return isinstance(model.log_jump_law(), (Normal, Unit))


def _log_jump_normal(model):
    law = model.log_jump_law()
    if model.intensity_q == 0:
        return 0.0, 0.0
    if isinstance(law, Normal):
        return law.mean, law.std
    if isinstance(law, Unit):
        return law.a, 0.0
    raise CapabilityError(
        f"series route needs lognormal or deterministic jumps, got {type(model.law_q).__name__} "
        f"with {model.transform}; use the quadrature route",
        "model.law",
    )


def _series(model: LevyModel, spot: float, strike: float, t: float, T: float, trunc: SeriesTruncation):
    """Undiscounted-weight series pieces ``(asset_part, cash_part, n_terms, tail)``.

    ``call = asset_part - K exp(-r tau) cash_part`` and a unit digital is
    ``exp(-r tau) cash_part``.
    """
    tau = T - t
    mu_j, delta = _log_jump_normal(model)
    lam = model.intensity_q
    kappa = math.expm1(mu_j + 0.5 * delta**2) if lam > 0 else 0.0
    var = model.integrated_variance(t, T)
    n_max, tail = trunc.terms(lam * tau * max(1.0, 1.0 + kappa))
    n = np.arange(n_max + 1)
    v = var + n * delta**2
    m = math.log(spot) + (model.rate - lam * kappa) * tau - 0.5 * var + n * mu_j
    d2 = (m - math.log(strike)) / np.sqrt(v)
    d1 = d2 + np.sqrt(v)
    w_asset = _poisson_pmf(n, lam * (1 + kappa) * tau)
    w_cash = _poisson_pmf(n, lam * tau)
    asset = spot * float(w_asset @ special.ndtr(d1))
    cash = float(w_cash @ special.ndtr(d2))
    return asset, cash, n_max, tail


def _poisson_pmf(n, mean):
    if mean == 0:
        return (n == 0).astype(float)
    return np.exp(n * math.log(mean) - mean - special.gammaln(n + 1))


def _series_result(model, contract, trunc, spot=None):
    spot = model.spot if spot is None else spot
    t, T, K = contract.valuation_time, contract.maturity, contract.strike
    disc = math.exp(-model.rate * (T - t))
    asset, cash, n_max, tail = _series(model, spot, K, t, T, trunc)
    call = asset - K * disc * cash
    if contract.kind == "call":
        price = call
    elif contract.kind == "put":
        price = call - spot + K * disc
    elif contract.kind == "digital_call":
        price = contract.payout * disc * cash
    else:
        raise CapabilityError(f"series pricer does not handle {contract.kind}")
    return PriceResult(price, "series", n_max, tail)


def price_european_series(model: LevyModel, contract: OptionContract,
                          trunc: SeriesTruncation = SeriesTruncation()) -> float:
    """Poisson-weighted Black-Scholes series (calls, puts via parity, digitals)."""
    return _series_result(model, contract, trunc).price


# --- quadrature route ---------------------------------------------------------

def share_truncation(model: LevyModel, t: float, T: float, trunc: SeriesTruncation) -> SeriesTruncation:
    """``trunc`` with enough terms for ``e^y``-weighted integrals.

    Term ``n`` of the log-price series carries ``(1 + kappa)^n`` times its
    Poisson weight once multiplied by ``S_T``, so the count must cover the
    Poisson(``lam tau (1 + kappa)``) tail as well.
    """
    if model.intensity_q == 0:
        return trunc
    tilted = model.intensity_q * (T - t) * max(1.0, 1.0 + model.jump_mean())
    return replace(trunc, min_terms=max(trunc.min_terms, trunc.terms(tilted)[0]))


def _density_and_pdf(model: LevyModel, t: float, T: float, grid: Grid1D, trunc: SeriesTruncation):
    params = model.log_price_params(t, T)
    tau = T - t
    trunc = share_truncation(model, t, T, trunc)
    x0 = math.log(model.spot)
    dens = jump_diffusion_density(params, 0.0, tau, grid, trunc, x=x0)
    if dens.route == "spectral":
        # Values under the transform round-off floor carry no information but
        # would be amplified by exp(y) in call and forward integrands.
        v = dens.values
        floor = SPECTRAL_FLOOR * np.abs(v).max()
        dens = replace(dens, values=np.where(np.abs(v) < floor, 0.0, v))
    if dens.atom_locs.size:
        raise CoverageError("log-price density has point masses at this resolution; refine the grid")
    if dens.route == "series" and has_mixture(params.law):
        def pdf(y):
            return mixture_pdf(params, tau, np.asarray(y) - x0, trunc)[0]
    else:
        def pdf(y):
            return interpolate(dens.continuous, y)
    return dens, pdf


_GL_X, _GL_W = np.polynomial.legendre.leggauss(12)


def _gl(func, a, b):
    if b <= a:
        return 0.0
    x = 0.5 * (b - a) * _GL_X + 0.5 * (a + b)
    return 0.5 * (b - a) * float(_GL_W @ func(x))


def _half_line(grid: Grid1D, g_nodes, g_func, a: float, above: bool) -> float:
    """``int_a^{x_max} g`` (above) or ``int_{x_min}^a g`` (below); ``g`` smooth on the piece."""
    h = grid.spacing
    x = grid.nodes
    n = grid.n_points
    j = int(math.floor((a - grid.x_min) / h))
    if above:
        if j < 0:
            return h * float(gregory_weights(n) @ g_nodes)
        if j >= n - 1:
            return 0.0
        piece = g_nodes[j + 1:]
        return _gl(g_func, a, x[j + 1]) + h * float(gregory_weights(piece.size) @ piece)
    if j >= n - 1:
        return h * float(gregory_weights(n) @ g_nodes)
    if j < 0:
        return 0.0
    piece = g_nodes[: j + 1]
    return h * float(gregory_weights(piece.size) @ piece) + _gl(g_func, x[j], a)


def _check_tails(dens: DensityGrid):
    v = np.abs(dens.values)
    if max(v[0], v[-1]) > 1e-10 * v.max():
        raise CoverageError("log-price density does not decay at the grid edges; widen the grid")


def _coverage(model, dens: DensityGrid, t, T):
    """Grid estimates of ``int f`` and ``int e^y f / (S e^{r tau})``, both 1 for exact coverage."""
    grid = dens.grid
    w = grid.spacing * gregory_weights(grid.n_points)
    mass = float(w @ dens.values)
    fwd = float(w @ (np.exp(grid.nodes) * dens.values)) / (model.spot * math.exp(model.rate * (T - t)))
    return mass, fwd


def _check_coverage(model, dens, t, T, need_forward):
    _check_tails(dens)
    mass, fwd = _coverage(model, dens, t, T)
    if abs(mass - 1) > COVERAGE_TOL:
        raise CoverageError(f"grid holds probability mass {mass:.12g}; widen the grid")
    if need_forward and abs(fwd - 1) > COVERAGE_TOL:
        raise CoverageError(f"grid recovers E[S_T] / forward = {fwd:.12g}; the payoff tail is not covered")
    return mass, fwd


AUTO_WIDENINGS = 3


def _auto_grids(model, t, T, grid):
    """The given grid, or the default grid followed by wider ones at equal spacing."""
    if grid is not None:
        yield grid
        return
    base = model.default_grid(t, T)
    half = 0.5 * (base.x_max - base.x_min)
    for k in range(AUTO_WIDENINGS + 1):
        yield Grid1D.centered(math.log(model.spot), half * 2**k, base.n_points * 2**k)


def _quadrature_result(model, contract, grid, trunc):
    if contract.kind == "down_and_out_call":
        raise CapabilityError("quadrature route prices terminal payoffs only; use the series route for barriers")
    err = None
    for g in _auto_grids(model, contract.valuation_time, contract.maturity, grid):
        try:
            return _quadrature_on(model, contract, g, trunc)
        except CoverageError as exc:
            err = exc
    raise err


def _quadrature_on(model, contract, grid, trunc):
    t, T, K = contract.valuation_time, contract.maturity, contract.strike
    dens, pdf = _density_and_pdf(model, t, T, grid, trunc)
    _, fwd = _check_coverage(model, dens, t, T, need_forward=False)
    notes = dens.notes
    kind = contract.kind
    parity = kind == "call" and abs(fwd - 1) > COVERAGE_TOL
    if parity:
        # The call integrand's exp(y) tail lies beyond what the grid resolves; the
        # put has a bounded payoff and the model is a martingale by construction.
        kind = "put"
        notes = notes + (f"call from put-call parity: grid forward ratio {fwd:.10g}",)
    y = grid.nodes
    a = math.log(K)
    if kind == "call":
        def g(z):
            return np.maximum(np.exp(z) - K, 0.0) * pdf(z)
        g_nodes = np.maximum(np.exp(y) - K, 0.0) * dens.values
        above = True
    elif kind == "put":
        def g(z):
            return np.maximum(K - np.exp(z), 0.0) * pdf(z)
        g_nodes = np.maximum(K - np.exp(y), 0.0) * dens.values
        above = False
    else:
        def g(z):
            return contract.payout * pdf(z)
        g_nodes = np.where(y > a, contract.payout, 0.0) * dens.values
        above = True
    disc = math.exp(-model.rate * (T - t))
    price = disc * _half_line(grid, g_nodes, g, a, above)
    if parity:
        price += model.spot - K * disc
    return PriceResult(price, "quadrature", dens.n_terms, dens.tail_mass, notes=notes)


def price_by_quadrature(model: LevyModel, contract: OptionContract, grid: Optional[Grid1D] = None,
                        trunc: SeriesTruncation = SeriesTruncation()) -> float:
    """``exp(-r tau) int payoff(e^y) f(y) dy`` against the log-price transition density."""
    return _quadrature_result(model, contract, grid, trunc).price


def martingale_ratio(model: LevyModel, t: float, T: float, grid: Optional[Grid1D] = None,
                     trunc: SeriesTruncation = SeriesTruncation()) -> float:
    """``E[S_T] / (S exp(r tau))`` by quadrature of the undiscounted density.

    On the automatic grid sequence the first grid that holds the density and
    the forward to within ``COVERAGE_TOL`` is used, else the widest one.
    """
    fwd = float("nan")
    for g in _auto_grids(model, t, T, grid):
        dens, _ = _density_and_pdf(model, t, T, g, trunc)
        try:
            return _check_coverage(model, dens, t, T, need_forward=True)[1]
        except CoverageError:
            fwd = _coverage(model, dens, t, T)[1]
    return fwd


# --- barrier ------------------------------------------------------------------

def _reflection_exponent(model, t, T):
    var_rate = model.integrated_variance(t, T) / (T - t)
    return 2 * model.rate / var_rate - 1


def _knocked_out_terminal(model, contract, trunc, spot):
    """Value at ``spot`` of ``(S_T - K) 1{S_T > B}`` (no path condition)."""
    K, B = contract.strike, contract.barrier
    call = replace(contract, kind="call")
    if K >= B:
        return _series_result(model, call, trunc, spot)
    at_b = replace(call, strike=B)
    dig = replace(contract, kind="digital_call", strike=B, payout=B - K)
    r1 = _series_result(model, at_b, trunc, spot)
    r2 = _series_result(model, dig, trunc, spot)
    return PriceResult(r1.price + r2.price, "series", max(r1.n_terms, r2.n_terms), max(r1.tail_mass, r2.tail_mass))


def _down_and_out_result(model, contract, trunc):
    if contract.kind != "down_and_out_call":
        raise ValidationError("contract is not a down-and-out call", "contract.kind")
    S, B = model.spot, contract.barrier
    if B >= S:
        return PriceResult(0.0, "series", knocked_out=True)
    t, T = contract.valuation_time, contract.maturity
    direct = _knocked_out_terminal(model, contract, trunc, S)
    mirror = _knocked_out_terminal(model, contract, trunc, B * B / S)
    p = _reflection_exponent(model, t, T)
    price = direct.price - (B / S) ** p * mirror.price
    notes = ("reflection-approximation: barrier overshoot by jumps ignored",) if model.intensity_q > 0 else ()
    return PriceResult(max(price, 0.0), "series", max(direct.n_terms, mirror.n_terms),
                       max(direct.tail_mass, mirror.tail_mass), notes=notes)


def price_down_and_out_call(model: LevyModel, contract: OptionContract,
                            trunc: SeriesTruncation = SeriesTruncation()) -> float:
    """Reflection price: vanilla at ``S`` minus ``(B/S)^(2r/sigma^2 - 1)`` times vanilla at ``B^2/S``.

    Returns 0 when the barrier is already at or above the spot.
    """
    return _down_and_out_result(model, contract, trunc).price


def price_down_and_in_call(model: LevyModel, contract: OptionContract,
                           trunc: SeriesTruncation = SeriesTruncation()) -> float:
    vanilla = price_european_series(model, replace(contract, kind="call"), trunc)
    return vanilla - price_down_and_out_call(model, contract, trunc)


# --- dispatch -----------------------------------------------------------------

ROUTES = ("auto", "series", "quadrature")


def price(model: LevyModel, contract: OptionContract, route: str = "auto", grid: Optional[Grid1D] = None,
          trunc: SeriesTruncation = SeriesTruncation()) -> PriceResult:
    if route not in ROUTES:
        raise ValidationError(f"route must be one of {ROUTES}, got {route!r}", "route")
    if contract.kind == "down_and_out_call":
        if route == "quadrature":
            raise CapabilityError("barrier contracts are priced by the series route only")
        return _down_and_out_result(model, contract, trunc)
    if route == "series" or (route == "auto" and series_capable(model)):
        return _series_result(model, contract, trunc)
    return _quadrature_result(model, contract, grid, trunc)


def price_batch(jobs, route: str = "auto", max_workers: Optional[int] = None):
    """Price ``(model, contract)`` pairs concurrently; results keep input order."""
    jobs = list(jobs)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(lambda mc: price(mc[0], mc[1], route), jobs))


# --- PIDE residual ------------------------------------------------------------

def pide_residual(model: LevyModel, V: Callable[[float, float], float], t: float, S: float,
                  dt: Optional[float] = None, dS: Optional[float] = None, n_quad: int = 64) -> float:
    """Finite-difference value of the pricing operator ``L V`` at ``(t, S)``.

    ``V(t, S)`` must be defined on ``[t - dt, t + dt]`` and on every post-jump spot
    ``S (1 + c(z))`` used by the jump quadrature.
    """
    dS = 1e-3 * S if dS is None else dS
    dt = 1e-4 if dt is None else dt
    if not (0 < dS <= 0.05 * S) or not (0 < dt <= 0.05):
        raise ResolutionError(f"stencil too coarse (dS/S={dS / S:.3g}, dt={dt:.3g})")
    sigma2 = model.sigma(t) ** 2 if callable(model.sigma) else model.sigma**2
    v0 = V(t, S)
    v_t = (V(t + dt, S) - V(t - dt, S)) / (2 * dt)
    up, dn = V(t, S + dS), V(t, S - dS)
    v_s = (up - dn) / (2 * dS)
    v_ss = (up - 2 * v0 + dn) / dS**2
    residual = v_t + 0.5 * sigma2 * S * S * v_ss + model.rate * S * v_s - model.rate * v0
    if model.intensity_q > 0:
        z, w = model.law_q.quadrature(n_quad)
        cz = model.c(z)
        jumps = np.array([V(t, S * (1 + c)) for c in cz])
        residual += model.intensity_q * float(w @ (jumps - v0 - S * cz * v_s))
    return float(residual)
