"""Jump-size laws, their characteristic functions and n-fold convolutions.

Family members: :class:`Unit`, :class:`Discrete`, :class:`Geometric`,
:class:`Binomial`, :class:`Poisson`, :class:`Exponential`, :class:`Normal`.
Closed-form n-fold convolutions may leave the family (:class:`Erlang`,
:class:`NegativeBinomial`).  :class:`LogOnePlus` is the law of ``log(1 + Z)``
and is used for log-price jumps when the relative jump is ``Z`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special, stats

from .errors import CoverageError, ResourceError, ValidationError
from .grid_fourier import Grid1D, GridFunction

ATOM_TAIL = 1e-17
MAX_ATOMS = 10**6
# Probability mass a rasterization may leave outside the grid.
COVERAGE_TAIL = 1e-12


class JumpLaw:
    """Common interface.  Subclasses are frozen dataclasses."""

    is_discrete = False

    def characteristic_function(self, theta):
        raise NotImplementedError

    def moments(self):
        """``(mean, second raw moment)``."""
        raise NotImplementedError

    def mgf(self, s: float) -> float:
        """``E[exp(s Z)]``; raises :class:`ValidationError` when it diverges."""
        raise NotImplementedError

    def convolve(self, n: int) -> "JumpLaw":
        raise NotImplementedError(f"no closed-form convolution for {type(self).__name__}")

    def sample(self, u):
        """Inverse-CDF transform of uniforms ``u`` in (0, 1)."""
        raise NotImplementedError

    def quadrature(self, n: int = 64):
        """Nodes and weights approximating expectations ``E[g(Z)]``."""
        if self.is_discrete:
            return self.atoms()
        raise NotImplementedError

    # discrete laws
    def atoms(self, tail: float = ATOM_TAIL):
        raise NotImplementedError

    # continuous laws
    def pdf(self, x):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def boundary_jump(self):
        """``(location, right_limit)`` of a density jump at the support edge, or None."""
        return None

    def support_min(self) -> float:
        return -np.inf


def _check_prob(p, name="p"):
    if not (0.0 < p < 1.0):
        raise ValidationError(f"{name} must lie in (0, 1), got {p}")


def _check_positive(v, name):
    if not (v > 0 and np.isfinite(v)):
        raise ValidationError(f"{name} must be positive and finite, got {v}")


def _theta(theta):
    return np.asarray(theta, dtype=float)


@dataclass(frozen=True)
class Unit(JumpLaw):
    """Point mass at ``a``.  ``Unit(0)`` is the Dirac mass at zero."""

    a: float = 0.0
    is_discrete = True

    def characteristic_function(self, theta):
        return np.exp(1j * _theta(theta) * self.a)

    def moments(self):
        return self.a, self.a**2

    def mgf(self, s):
        return float(np.exp(s * self.a))

    def convolve(self, n):
        return Unit(n * self.a)

    def sample(self, u):
        return np.full(np.shape(u), self.a, dtype=float)

    def atoms(self, tail=ATOM_TAIL):
        return np.array([self.a]), np.array([1.0])


@dataclass(frozen=True)
class Discrete(JumpLaw):
    """Finite atom list ``((location, probability), ...)``."""

    atoms_: tuple
    is_discrete = True

    def __post_init__(self):
        pairs = tuple((float(x), float(p)) for x, p in self.atoms_)
        if not pairs:
            raise ValidationError("discrete law needs at least one atom")
        probs = np.array([p for _, p in pairs])
        if np.any(probs <= 0) or not np.all(np.isfinite([x for x, _ in pairs])):
            raise ValidationError("discrete atom probabilities must be positive, locations finite")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValidationError(f"discrete probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "atoms_", pairs)

    @cached_property
    def _arrays(self):
        locs = np.array([x for x, _ in self.atoms_])
        probs = np.array([p for _, p in self.atoms_])
        return locs, probs

    def atoms(self, tail=ATOM_TAIL):
        return self._arrays

    def characteristic_function(self, theta):
        locs, probs = self._arrays
        t = _theta(theta)
        return np.exp(1j * np.multiply.outer(t, locs)) @ probs

    def moments(self):
        locs, probs = self._arrays
        return float(probs @ locs), float(probs @ locs**2)

    def mgf(self, s):
        locs, probs = self._arrays
        return float(probs @ np.exp(s * locs))

    def convolve(self, n):
        if n == 0:
            return Unit(0.0)
        locs, probs = self._arrays
        cur_l, cur_p = np.array([0.0]), np.array([1.0])
        for _ in range(n):
            if cur_l.size * locs.size > MAX_ATOMS * 8:
                raise ResourceError("discrete convolution support blow-up; use the Fourier route")
            cur_l, cur_p = _merge_atoms(np.add.outer(cur_l, locs).ravel(), np.multiply.outer(cur_p, probs).ravel())
            if cur_l.size > MAX_ATOMS:
                raise ResourceError(
                    f"discrete convolution has {cur_l.size} atoms (> {MAX_ATOMS}); use the Fourier route"
                )
        return Discrete(tuple(zip(cur_l, cur_p)))

    def sample(self, u):
        locs, probs = self._arrays
        cdf = np.cumsum(probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), locs.size - 1)
        return locs[idx]


def _merge_atoms(locs, probs, decimals=9):
    """Combine atoms whose locations agree to ``decimals`` places; keeps exact representatives."""
    keys = np.round(locs, decimals)
    order = np.argsort(keys, kind="stable")
    keys, locs, probs = keys[order], locs[order], probs[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    return locs[starts], np.add.reduceat(probs, starts)


class _IntegerLaw(JumpLaw):
    """Shared machinery for laws on the integers."""

    is_discrete = True

    def _dist(self):
        raise NotImplementedError

    def _offset(self):
        return 0

    def atoms(self, tail=ATOM_TAIL):
        dist = self._dist()
        mean, m2 = self.moments()
        sd = np.sqrt(max(m2 - mean * mean, 0.0))
        k = np.arange(0, int(mean + 45 * sd) + 80)
        beyond = np.flatnonzero(dist.logsf(k) < np.log(tail))
        if beyond.size:
            k = k[: beyond[0] + 1]
        p = dist.pmf(k)
        keep = p > 0
        return (k[keep] + self._offset()).astype(float), p[keep]

    def sample(self, u):
        locs, probs = self.atoms(1e-18)
        cdf = np.cumsum(probs)
        idx = np.minimum(np.searchsorted(cdf, u, side="right"), locs.size - 1)
        return locs[idx]


@dataclass(frozen=True)
class Geometric(_IntegerLaw):
    """Number of trials to the first success: mass ``p (1-p)^(k-1)`` on ``k = 1, 2, ...``."""

    p: float

    def __post_init__(self):
        _check_prob(self.p)

    def _dist(self):
        return stats.geom(self.p)

    def characteristic_function(self, theta):
        e = np.exp(1j * _theta(theta))
        return self.p * e / (1 - (1 - self.p) * e)

    def moments(self):
        mean = 1 / self.p
        return mean, (2 - self.p) / self.p**2

    def mgf(self, s):
        q = (1 - self.p) * np.exp(s)
        if q >= 1:
            raise ValidationError(f"geometric mgf diverges at s={s} (p={self.p})")
        return float(self.p * np.exp(s) / (1 - q))

    def convolve(self, n):
        if n == 0:
            return Unit(0.0)
        return self if n == 1 else NegativeBinomial(n, self.p)

    def sample(self, u):
        k = np.ceil(np.log1p(-np.asarray(u, dtype=float)) / np.log1p(-self.p))
        return np.maximum(k, 1.0)


@dataclass(frozen=True)
class NegativeBinomial(_IntegerLaw):
    """Trials needed for ``n`` successes (sum of ``n`` geometric laws)."""

    n: int
    p: float

    def __post_init__(self):
        _check_prob(self.p)
        if self.n < 1:
            raise ValidationError("negative binomial needs n >= 1")

    def _dist(self):
        return stats.nbinom(self.n, self.p)

    def _offset(self):
        return self.n

    def characteristic_function(self, theta):
        return Geometric(self.p).characteristic_function(theta) ** self.n

    def moments(self):
        m, m2 = Geometric(self.p).moments()
        var = m2 - m * m
        return self.n * m, self.n * var + (self.n * m) ** 2

    def mgf(self, s):
        return Geometric(self.p).mgf(s) ** self.n

    def convolve(self, k):
        return Unit(0.0) if k == 0 else NegativeBinomial(self.n * k, self.p)


@dataclass(frozen=True)
class Binomial(_IntegerLaw):
    m: int
    p: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"binomial m must be a positive integer, got {self.m}")
        object.__setattr__(self, "m", int(self.m))
        _check_prob(self.p)

    def _dist(self):
        return stats.binom(self.m, self.p)

    def atoms(self, tail=ATOM_TAIL):
        k = np.arange(self.m + 1)
        return k.astype(float), stats.binom.pmf(k, self.m, self.p)

    def characteristic_function(self, theta):
        return (1 - self.p + self.p * np.exp(1j * _theta(theta))) ** self.m

    def moments(self):
        mean = self.m * self.p
        return mean, self.m * self.p * (1 - self.p) + mean**2

    def mgf(self, s):
        return float((1 - self.p + self.p * np.exp(s)) ** self.m)

    def convolve(self, n):
        return Unit(0.0) if n == 0 else Binomial(n * self.m, self.p)


@dataclass(frozen=True)
class Poisson(_IntegerLaw):
    """Poisson-distributed jump size on ``{0, 1, 2, ...}``."""

    rate: float

    def __post_init__(self):
        _check_positive(self.rate, "poisson rate")

    def _dist(self):
        return stats.poisson(self.rate)

    def characteristic_function(self, theta):
        return np.exp(self.rate * (np.exp(1j * _theta(theta)) - 1))

    def moments(self):
        return self.rate, self.rate + self.rate**2

    def mgf(self, s):
        return float(np.exp(self.rate * np.expm1(s)))

    def convolve(self, n):
        return Unit(0.0) if n == 0 else Poisson(n * self.rate)


@dataclass(frozen=True)
class Erlang(JumpLaw):
    """Sum of ``n`` independent exponentials with rate ``rate``."""

    n: int
    rate: float

    def __post_init__(self):
        _check_positive(self.rate, "rate")
        if self.n < 1:
            raise ValidationError("Erlang needs n >= 1")

    def characteristic_function(self, theta):
        return (self.rate / (self.rate - 1j * _theta(theta))) ** self.n

    def moments(self):
        mean = self.n / self.rate
        return mean, self.n * (self.n + 1) / self.rate**2

    def mgf(self, s):
        if s >= self.rate:
            raise ValidationError(f"exponential mgf diverges at s={s} (rate={self.rate})")
        return float((self.rate / (self.rate - s)) ** self.n)

    def convolve(self, k):
        return Unit(0.0) if k == 0 else Erlang(self.n * k, self.rate)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        pos = x > 0
        xp = x[pos]
        log_norm = self.n * np.log(self.rate) - special.gammaln(self.n)
        out[pos] = np.exp(log_norm + (self.n - 1) * np.log(xp) - self.rate * xp)
        if self.n == 1:
            out[x == 0] = self.rate
        return out

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x > 0, special.gammainc(self.n, self.rate * np.maximum(x, 0)), 0.0)

    def boundary_jump(self):
        return (0.0, self.rate) if self.n == 1 else None

    def support_min(self):
        return 0.0

    def sample(self, u):
        return special.gammaincinv(self.n, np.asarray(u, dtype=float)) / self.rate

    def quadrature(self, n=64):
        x, w = special.roots_genlaguerre(n, self.n - 1)
        return x / self.rate, w / special.gamma(self.n)


@dataclass(frozen=True)
class Exponential(JumpLaw):
    rate: float

    def __post_init__(self):
        _check_positive(self.rate, "exponential rate")

    @cached_property
    def _erlang(self):
        return Erlang(1, self.rate)

    def characteristic_function(self, theta):
        return self.rate / (self.rate - 1j * _theta(theta))

    def moments(self):
        return 1 / self.rate, 2 / self.rate**2

    def mgf(self, s):
        return self._erlang.mgf(s)

    def convolve(self, n):
        return Unit(0.0) if n == 0 else (self if n == 1 else Erlang(n, self.rate))

    def pdf(self, x):
        return self._erlang.pdf(x)

    def cdf(self, x):
        return self._erlang.cdf(x)

    def boundary_jump(self):
        return 0.0, self.rate

    def support_min(self):
        return 0.0

    def sample(self, u):
        return -np.log1p(-np.asarray(u, dtype=float)) / self.rate

    def quadrature(self, n=64):
        return self._erlang.quadrature(n)


@dataclass(frozen=True)
class Normal(JumpLaw):
    mean: float
    std: float

    def __post_init__(self):
        _check_positive(self.std, "normal std")

    def characteristic_function(self, theta):
        t = _theta(theta)
        return np.exp(1j * self.mean * t - 0.5 * (self.std * t) ** 2)

    def moments(self):
        return self.mean, self.std**2 + self.mean**2

    def mgf(self, s):
        return float(np.exp(self.mean * s + 0.5 * (self.std * s) ** 2))

    def convolve(self, n):
        return Unit(0.0) if n == 0 else Normal(n * self.mean, self.std * np.sqrt(n))

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mean) / self.std
        return np.exp(-0.5 * z * z) / (self.std * np.sqrt(2 * np.pi))

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mean) / self.std)

    def sample(self, u):
        return self.mean + self.std * special.ndtri(np.asarray(u, dtype=float))

    def quadrature(self, n=64):
        x, w = np.polynomial.hermite_e.hermegauss(n)
        return self.mean + self.std * x, w / np.sqrt(2 * np.pi)


@dataclass(frozen=True)
class LogOnePlus(JumpLaw):
    """Law of ``log(1 + Z)`` for a continuous ``Z`` supported in ``(-1, inf)``."""

    base: JumpLaw
    panels: int = 512
    order: int = 16

    def __post_init__(self):
        if self.base.is_discrete:
            raise ValidationError("LogOnePlus is for continuous laws; map discrete atoms directly")
        if self.base.support_min() <= -1:
            raise ValidationError("log(1+Z) requires Z > -1 on the support")

    @cached_property
    def _rule(self):
        # Composite Gauss-Legendre over quantile panels of the base law.
        q = np.linspace(0.0, 1.0, self.panels + 1)
        q[0], q[-1] = 1e-18, np.nextafter(1.0, 0.0)
        edges = self.base.sample(q)
        edges[0] = max(edges[0], self.base.support_min())
        x, w = np.polynomial.legendre.leggauss(self.order)
        a, b = edges[:-1, None], edges[1:, None]
        nodes = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
        weights = (0.5 * (b - a) * w).ravel() * self.base.pdf(nodes)
        return nodes, weights / weights.sum()

    def characteristic_function(self, theta):
        z, w = self._rule
        y = np.log1p(z)
        t = np.atleast_1d(_theta(theta))
        out = np.empty(t.shape, dtype=complex)
        for s in range(0, t.size, 256):
            out[s:s + 256] = np.exp(1j * np.multiply.outer(t[s:s + 256], y)) @ w
        return out.reshape(np.shape(theta))

    def moments(self):
        z, w = self._rule
        y = np.log1p(z)
        return float(w @ y), float(w @ y**2)

    def mgf(self, s):
        z, w = self._rule
        return float(w @ np.exp(s * np.log1p(z)))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        z = np.expm1(x)
        return self.base.pdf(z) * np.exp(x)

    def cdf(self, x):
        return self.base.cdf(np.expm1(np.asarray(x, dtype=float)))

    def support_min(self):
        return float(np.log1p(self.base.support_min()))

    def boundary_jump(self):
        bj = self.base.boundary_jump()
        if bj is None:
            return None
        loc, right = bj
        return float(np.log1p(loc)), right * (1 + loc)

    def sample(self, u):
        return np.log1p(self.base.sample(u))

    def quadrature(self, n=64):
        z, w = self._rule
        return np.log1p(z), w


FAMILY = (Unit, Discrete, Geometric, Binomial, Poisson, Exponential, Normal)


def characteristic_function(law: JumpLaw, theta):
    return law.characteristic_function(theta)


def convolve_law(law: JumpLaw, n: int) -> JumpLaw:
    """Exact law of the sum of ``n`` i.i.d. copies; ``n = 0`` is the Dirac mass at 0."""
    if int(n) != n or n < 0:
        raise ValidationError(f"n must be a non-negative integer, got {n}")
    n = int(n)
    if n == 0:
        return Unit(0.0)
    if n == 1:
        return law
    return law.convolve(n)


def moments(law: JumpLaw):
    return law.moments()


def sample_density(law: JumpLaw, grid: Grid1D, mass: float = 1.0, strict: bool = True) -> GridFunction:
    """Rasterize ``law`` on ``grid``.

    Continuous laws are sampled pointwise, with the midpoint value at a support-edge
    jump that falls on a node.  Atoms are deposited as ``mass / spacing`` at the
    nearest node.
    """
    values = np.zeros(grid.n_points)
    if law.is_discrete:
        deposit_atoms(values, grid, *law.atoms(), tol=COVERAGE_TAIL if strict else np.inf)
    else:
        x = grid.nodes
        values += law.pdf(x)
        bj = law.boundary_jump()
        if bj is not None:
            idx = int(grid.nearest_index(bj[0]))
            if 0 <= idx < grid.n_points and np.isclose(x[idx], bj[0], rtol=0, atol=1e-12 * grid.spacing):
                values[idx] = 0.5 * bj[1]
        outside = float(law.cdf(grid.x_min) + 1 - law.cdf(grid.x_max - grid.spacing))
        if outside > COVERAGE_TAIL and strict:
            raise CoverageError(f"{outside:.3e} of the law's mass lies outside the grid")
    return GridFunction(grid, mass * values)


def deposit_atoms(values: np.ndarray, grid: Grid1D, locs, masses, tol: float = 0.0):
    """Add ``masses / spacing`` at nodes nearest ``locs`` (in place)."""
    if len(locs) == 0:
        return values
    idx = grid.nearest_index(locs)
    inside = (idx >= 0) & (idx < grid.n_points)
    lost = float(np.sum(np.asarray(masses)[~inside]))
    if lost > tol:
        raise CoverageError(f"atoms of total mass {lost:.3e} fall outside the grid")
    np.add.at(values, idx[inside], np.asarray(masses)[inside] / grid.spacing)
    return values


_PARSERS = {
    "unit": (lambda a: Unit(float(a)), 1),
    "geometric": (lambda p: Geometric(float(p)), 1),
    "binomial": (lambda m, p: Binomial(_int(m), float(p)), 2),
    "poisson": (lambda r: Poisson(float(r)), 1),
    "exponential": (lambda r: Exponential(float(r)), 1),
    "normal": (lambda mu, s: Normal(float(mu), float(s)), 2),
}


def _int(text):
    value = float(text)
    if value != int(value):
        raise ValidationError(f"expected an integer, got {text}")
    return int(value)


def parse_law(text: str) -> JumpLaw:
    """Parse ``kind:arg:arg`` law syntax, e.g. ``normal:-0.1:0.15`` or ``discrete:1:0.5,2:0.5``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "discrete":
            atoms = []
            for item in rest.split(","):
                loc, prob = item.split(":")
                atoms.append((float(loc), float(prob)))
            return Discrete(tuple(atoms))
        if kind not in _PARSERS:
            raise ValidationError(f"unknown jump law kind {kind!r}")
        factory, nargs = _PARSERS[kind]
        args = rest.split(":") if rest else []
        if len(args) != nargs:
            raise ValidationError(f"{kind} law expects {nargs} parameter(s), got {len(args)}")
        return factory(*args)
    except ValidationError:
        raise
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"cannot parse jump law {text!r}: {exc}") from exc


def format_law(law: JumpLaw) -> str:
    if isinstance(law, Unit):
        return f"unit:{law.a!r}"
    if isinstance(law, Discrete):
        return "discrete:" + ",".join(f"{x!r}:{p!r}" for x, p in law.atoms_)
    if isinstance(law, Geometric):
        return f"geometric:{law.p!r}"
    if isinstance(law, Binomial):
        return f"binomial:{law.m}:{law.p!r}"
    if isinstance(law, Poisson):
        return f"poisson:{law.rate!r}"
    if isinstance(law, Exponential):
        return f"exponential:{law.rate!r}"
    if isinstance(law, Normal):
        return f"normal:{law.mean!r}:{law.std!r}"
    raise ValidationError(f"no text form for {law!r}")
