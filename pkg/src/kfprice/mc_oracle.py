"""Monte Carlo simulation of the risk-neutral jump-diffusion, used as a pricing oracle.

Random numbers come from Philox4x32-10 keyed by the seed and addressed by
``(path, draw)``, so a path's stream does not depend on how paths are split
into blocks or threads.  Normals use the inverse normal CDF so that each draw
consumes exactly one uniform.

Draw layout per path:

* terminal runs: draw 0 is the Brownian normal, draw 1 the jump count, draws
  ``2 + k`` the jump sizes;
* path runs: step ``s`` owns draws ``s * 2**20 + slot``.  Slot 0 is the jump
  count in the step, slot ``1 + 3j`` the normal of the ``j``-th diffusion
  segment, slots ``2 + 3j`` and ``3 + 3j`` the time and size of jump ``j``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .errors import CapabilityError, ValidationError
from .jump_laws import Exponential, JumpLaw, Normal, Unit
from .pricing import LevyModel, OptionContract

STEP_SHIFT = 20
MAX_POISSON_MEAN = 700.0

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_LO = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


@numba.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32 with 10 rounds; all arguments and results are 32-bit values in uint64."""
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (p1 >> _S32) ^ c1 ^ k0, p1 & _LO, (p0 >> _S32) ^ c3 ^ k1, p0 & _LO
        k0 = (k0 + _W0) & _LO
        k1 = (k1 + _W1) & _LO
    return c0, c1, c2, c3


@numba.njit(cache=True, nogil=True)
def _uniform(k0, k1, path, draw):
    block = np.uint64(draw >> 1)
    p = np.uint64(path)
    w0, w1, w2, w3 = philox4x32(block & _LO, block >> _S32, p & _LO, p >> _S32, k0, k1)
    if draw & 1:
        w0, w1 = w2, w3
    hi = np.float64(w0 >> np.uint64(5))
    lo = np.float64(w1 >> np.uint64(6))
    return (hi * 67108864.0 + lo + 0.5) * 1.1102230246251565e-16


@numba.njit(cache=True)
def uniforms(seed_lo, seed_hi, paths, draws):
    """Uniforms on (0, 1) for the given (path, draw) counters."""
    out = np.empty(paths.size)
    k0, k1 = np.uint64(seed_lo), np.uint64(seed_hi)
    for i in range(paths.size):
        out[i] = _uniform(k0, k1, paths[i], draws[i])
    return out


@numba.njit(cache=True, nogil=True)
def _ndtri(p):
    """Inverse standard normal CDF: rational first guess refined by one Halley step."""
    if p > 0.5:
        return -_ndtri(1.0 - p)
    if p < 0.02425:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((-7.784894002430293e-03 * q - 3.223964580411365e-01) * q - 2.400758277161838e+00) * q
               - 2.549732539343734e+00) * q + 4.374664141464968e+00) * q + 2.938163982698783e+00) / \
            ((((7.784695709041462e-03 * q + 3.224671290700398e-01) * q + 2.445134137142996e+00) * q
              + 3.754408661907416e+00) * q + 1.0)
    else:
        q = p - 0.5
        r = q * q
        x = (((((-3.969683028665376e+01 * r + 2.209460984245205e+02) * r - 2.759285104469687e+02) * r
               + 1.383577518672690e+02) * r - 3.066479806614716e+01) * r + 2.506628277459239e+00) * q / \
            (((((-5.447609879822406e+01 * r + 1.615858368580409e+02) * r - 1.556989798598866e+02) * r
               + 6.680131188771972e+01) * r - 1.328068155288572e+01) * r + 1.0)
    e = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@numba.njit(cache=True)
def ndtri(p):
    out = np.empty(p.size)
    for i in range(p.size):
        out[i] = _ndtri(p[i])
    return out


@numba.njit(cache=True, nogil=True)
def _poisson_inv(u, mean):
    prob = math.exp(-mean)
    cdf = prob
    k = 0
    while u > cdf and prob > 0.0:
        k += 1
        prob *= mean / k
        cdf += prob
    return k


# Jump-law codes for the kernels.
_UNIT, _TABLE, _NORMAL, _EXPONENTIAL = 0, 1, 2, 3


@numba.njit(cache=True, nogil=True)
def _log_jump(u, kind, par, locs, cdf, identity):
    if kind == _UNIT:
        z = par[0]
    elif kind == _TABLE:
        j = np.searchsorted(cdf, u, side="right")
        z = locs[min(j, locs.size - 1)]
    elif kind == _NORMAL:
        z = par[0] + par[1] * _ndtri(u)
    else:
        z = -math.log1p(-u) / par[0]
    return math.log1p(z) if identity else z


@dataclass(frozen=True)
class _LawCode:
    kind: int
    par: np.ndarray
    locs: np.ndarray
    cdf: np.ndarray


def _encode_law(law: JumpLaw) -> _LawCode:
    empty = np.zeros(1)
    if isinstance(law, Unit):
        return _LawCode(_UNIT, np.array([law.a]), empty, empty)
    if law.is_discrete:
        locs, probs = law.atoms()
        cdf = np.cumsum(probs)
        return _LawCode(_TABLE, empty, np.asarray(locs, dtype=float), cdf / cdf[-1])
    if isinstance(law, Normal):
        return _LawCode(_NORMAL, np.array([law.mean, law.std]), empty, empty)
    if isinstance(law, Exponential):
        return _LawCode(_EXPONENTIAL, np.array([law.rate]), empty, empty)
    raise CapabilityError(f"no Monte Carlo sampler for {type(law).__name__}", "model.law")


@numba.njit(cache=True, nogil=True)
def _terminal_kernel(k0, k1, start, n, x0, drift, sd, mean_count, kind, par, locs, cdf, identity, out):
    for i in range(n):
        path = start + i
        x = x0 + drift + sd * _ndtri(_uniform(k0, k1, path, 0))
        if mean_count > 0.0:
            count = _poisson_inv(_uniform(k0, k1, path, 1), mean_count)
            for k in range(count):
                x += _log_jump(_uniform(k0, k1, path, 2 + k), kind, par, locs, cdf, identity)
        out[i] = x


@numba.njit(cache=True, nogil=True)
def _barrier_kernel(k0, k1, start, n, x0, log_b, strike, drift, var, mean_count,
                    kind, par, locs, cdf, identity, bridge, out):
    """Undiscounted weighted call payoffs ``w (S_T - K)^+ 1{alive}`` along simulated paths."""
    n_steps = drift.size
    for i in range(n):
        path = start + i
        x = x0
        weight = 1.0
        alive = True
        for s in range(n_steps):
            base = s << STEP_SHIFT
            count = 0
            if mean_count > 0.0:
                count = _poisson_inv(_uniform(k0, k1, path, base), mean_count)
            if count == 0:
                x1 = x + drift[s] + math.sqrt(var[s]) * _ndtri(_uniform(k0, k1, path, base + 1))
                if x1 <= log_b:
                    alive = False
                    break
                if bridge and var[s] > 0.0:
                    weight *= -math.expm1(-2.0 * (x - log_b) * (x1 - log_b) / var[s])
                x = x1
                continue
            times = np.empty(count + 1)
            sizes = np.empty(count + 1)
            for j in range(count):
                times[j] = _uniform(k0, k1, path, base + 2 + 3 * j)
                sizes[j] = _log_jump(_uniform(k0, k1, path, base + 3 + 3 * j), kind, par, locs, cdf, identity)
            times[count] = 1.0
            sizes[count] = 0.0
            order = np.argsort(times)
            prev = 0.0
            for j in range(count + 1):
                t_end = times[order[j]]
                frac = t_end - prev
                prev = t_end
                v = var[s] * frac
                x1 = x + drift[s] * frac + math.sqrt(v) * _ndtri(_uniform(k0, k1, path, base + 1 + 3 * j))
                if x1 <= log_b:
                    alive = False
                    break
                if bridge and v > 0.0:
                    weight *= -math.expm1(-2.0 * (x - log_b) * (x1 - log_b) / v)
                x = x1 + sizes[order[j]]
                if x <= log_b:
                    alive = False
                    break
            if not alive:
                break
        out[i] = weight * max(math.exp(x) - strike, 0.0) if alive else 0.0


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    n_steps: int = 1
    seed: int = 0
    bridge_correction: bool = True
    workers: int = 1
    block_size: int = 32768

    def __post_init__(self):
        if not (isinstance(self.n_paths, (int, np.integer)) and self.n_paths >= 1):
            raise ValidationError(f"n_paths must be a positive integer, got {self.n_paths!r}", "mc.n_paths")
        if not (isinstance(self.n_steps, (int, np.integer)) and 1 <= self.n_steps < 2**40):
            raise ValidationError(f"n_steps must be a positive integer, got {self.n_steps!r}", "mc.n_steps")
        if not (isinstance(self.seed, (int, np.integer)) and 0 <= self.seed < 2**64):
            raise ValidationError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}", "mc.seed")
        if self.workers < 1 or self.block_size < 1:
            raise ValidationError("workers and block_size must be positive", "mc.workers")

    @property
    def key(self):
        return np.uint64(self.seed & 0xFFFFFFFF), np.uint64(self.seed >> 32)


@dataclass(frozen=True)
class McResult:
    estimate: float
    std_error: float
    n_paths: int
    seed: int


def summarize(values: np.ndarray, seed: int = 0) -> McResult:
    """Mean and standard error with correctly rounded sums, so the result ignores path order."""
    values = np.asarray(values, dtype=float)
    n = values.size
    mean = math.fsum(values) / n
    if n < 2:
        return McResult(mean, float("nan"), n, seed)
    var = math.fsum((values - mean) ** 2) / (n - 1)
    return McResult(mean, math.sqrt(var / n), n, seed)


def _run_blocks(kernel, cfg: McConfig, args):
    out = np.empty(cfg.n_paths)
    k0, k1 = cfg.key
    starts = range(0, cfg.n_paths, cfg.block_size)

    def work(start):
        n = min(cfg.block_size, cfg.n_paths - start)
        kernel(k0, k1, start, n, *args, out[start:start + n])

    if cfg.workers == 1:
        for start in starts:
            work(start)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(work, starts))
    return out


def _model_code(model: LevyModel, mean_count: float):
    if mean_count > MAX_POISSON_MEAN:
        raise ValidationError(f"expected jump count {mean_count:g} too large to simulate", "model.intensity_q")
    code = _encode_law(model.law_q) if model.intensity_q > 0 else _encode_law(Unit(0.0))
    return code.kind, code.par, code.locs, code.cdf, model.transform == "identity"


def _drift_rate(model: LevyModel) -> float:
    kappa = model.jump_mean() if model.intensity_q > 0 else 0.0
    return model.rate - model.intensity_q * kappa


def simulate_terminal(model: LevyModel, tau: float, cfg: McConfig, t: float = 0.0) -> np.ndarray:
    """Exact draws of ``log S_{t + tau}`` given ``S_t = model.spot``; ``cfg.n_steps`` is ignored."""
    if not tau > 0:
        raise ValidationError(f"tau must be positive, got {tau}", "contract.maturity")
    var = model.integrated_variance(t, t + tau)
    drift = _drift_rate(model) * tau - 0.5 * var
    mean_count = model.intensity_q * tau
    args = (math.log(model.spot), drift, math.sqrt(var), mean_count, *_model_code(model, mean_count))
    return _run_blocks(_terminal_kernel, cfg, args)


def mc_price(model: LevyModel, contract: OptionContract, cfg: McConfig) -> McResult:
    """Discounted payoff mean; barrier contracts go to :func:`simulate_barrier`."""
    if contract.kind == "down_and_out_call":
        return simulate_barrier(model, contract, cfg=cfg)
    tau = contract.tau
    x = simulate_terminal(model, tau, cfg, contract.valuation_time)
    return summarize(math.exp(-model.rate * tau) * contract.payoff(np.exp(x)), cfg.seed)


def mc_martingale(model: LevyModel, tau: float, cfg: McConfig) -> McResult:
    """Estimate of ``exp(-r tau) E[S_tau]``, which should equal the spot."""
    x = simulate_terminal(model, tau, cfg)
    return summarize(math.exp(-model.rate * tau) * np.exp(x), cfg.seed)


def simulate_barrier(model: LevyModel, contract: OptionContract, tau: Optional[float] = None,
                     cfg: Optional[McConfig] = None) -> McResult:
    """Down-and-out call by jump-adapted path simulation.

    The barrier is checked at step ends, before and after each jump; with
    ``cfg.bridge_correction`` each diffusion segment is also weighted by its
    Brownian-bridge survival probability.  A contract with ``barrier=None`` is
    the vanilla call on the same paths.
    """
    if cfg is None:
        raise ValidationError("simulate_barrier needs an McConfig", "mc")
    if contract.kind not in ("down_and_out_call", "call"):
        raise ValidationError("simulate_barrier prices down-and-out (or vanilla) calls", "contract.kind")
    t, T = contract.valuation_time, contract.maturity
    if tau is not None and not math.isclose(tau, T - t, rel_tol=1e-12):
        raise ValidationError(f"tau {tau} disagrees with the contract horizon {T - t}", "contract.maturity")
    B = contract.barrier if contract.kind == "down_and_out_call" else None
    if B is not None and B >= model.spot:
        return McResult(0.0, 0.0, cfg.n_paths, cfg.seed)
    edges = np.linspace(t, T, cfg.n_steps + 1)
    if callable(model.sigma):
        var = np.array([model.integrated_variance(a, b) for a, b in zip(edges[:-1], edges[1:])])
    else:
        var = model.sigma**2 * np.diff(edges)
    drift = _drift_rate(model) * np.diff(edges) - 0.5 * var
    mean_count = model.intensity_q * (T - t) / cfg.n_steps
    log_b = math.log(B) if B is not None else -np.inf
    args = (math.log(model.spot), log_b, contract.strike, drift, var, mean_count,
            *_model_code(model, mean_count), bool(cfg.bridge_correction and B is not None))
    payoff = _run_blocks(_barrier_kernel, cfg, args)
    return summarize(math.exp(-model.rate * (T - t)) * payoff, cfg.seed)
