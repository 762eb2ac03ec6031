"""Compound Poisson and jump-diffusion transition densities."""

import math

import mpmath as mp
import numpy as np
import pytest
from scipy import integrate as sp_integrate
from scipy import special, stats

from conftest import family_models
from kfprice.errors import ConvergenceError, ValidationError
from kfprice.grid_fourier import Grid1D, GridFunction, convolve, integrate
from kfprice.jump_laws import Binomial, Discrete, Exponential, Geometric, Normal, Poisson, Unit
from kfprice.kf_solver import DiffusionCoefficients, JumpSpec, full_generator_propagator, increment_density
from kfprice.pricing import LevyModel, OptionContract, price_european_series
from kfprice.transition_density import (
    JumpDiffusionParams,
    SeriesTruncation,
    compound_poisson_density,
    compound_poisson_density_spectral,
    default_density_grid,
    fundamental_solution,
    gauss_erlang_pdf,
    jump_diffusion_density,
    mixture_atoms,
    scaled_hh,
)
from oracles import BINOMIAL_SHIFT0_WEIGHT

LAWS = {
    "unit": Unit(1.0),
    "discrete": Discrete(((-1.0, 0.3), (0.5, 0.2), (2.0, 0.5))),
    "geometric": Geometric(0.5),
    "binomial": Binomial(3, 0.5),
    "poisson": Poisson(1.0),
    "exponential": Exponential(1.0),
    "normal": Normal(0.5, 1.0),
}


class TestSeriesTruncation:
    @pytest.mark.parametrize("mean", [1e-6, 0.5, 3.0, 40.0])
    def test_tail_below_tolerance(self, mean):
        trunc = SeriesTruncation()
        n, tail = trunc.terms(mean)
        assert tail < trunc.tail_tolerance
        assert tail == pytest.approx(stats.poisson.sf(n, mean), rel=1e-12)
        assert n == 0 or stats.poisson.sf(n - 1, mean) >= trunc.tail_tolerance

    def test_min_terms(self):
        assert SeriesTruncation(min_terms=30).terms(1.0)[0] == 30

    def test_convergence_error(self):
        with pytest.raises(ConvergenceError):
            SeriesTruncation(max_terms=200).terms(500.0)

    @pytest.mark.parametrize("kw", [dict(tail_tolerance=0.0), dict(max_terms=0), dict(min_terms=300)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            SeriesTruncation(**kw)


class TestCompoundPoisson:
    def test_vanishing_horizon_leaves_dirac(self):
        d = compound_poisson_density(1.0, Normal(0.0, 1.0), 0.0, 1e-12, Grid1D(-8.0, 8.0, 1024))
        assert d.atom_locs.tolist() == [0.0]
        assert d.atom_masses[0] == pytest.approx(1.0, abs=1e-11)
        assert abs(d.total_mass() - 1.0) < 1e-12

    def test_unit_jumps_are_poisson_masses(self):
        d = compound_poisson_density(1.0, Unit(1.0), 0.0, 1.0, Grid1D(-2.0, 30.0, 1024))
        k = np.arange(d.atom_locs.size)
        np.testing.assert_array_equal(d.atom_locs, k)
        np.testing.assert_allclose(d.atom_masses, math.exp(-1) / special.factorial(k), rtol=1e-14)
        assert d.atom_masses[0] == pytest.approx(0.36788, abs=5e-6)
        assert not d.values.any()

    def test_exponential_matches_inverted_multiplier(self):
        g = Grid1D.centered(0.0, 64.0, 2**14, dyadic=True)
        series = compound_poisson_density(2.0, Exponential(1.0), 0.0, 1.0, g)
        k = int(g.nearest_index(1.0))
        # only the first convolution power is handled in closed form on the Fourier side
        spectral = compound_poisson_density_spectral(2.0, Exponential(1.0), 0.0, 1.0, g, singular_terms=1)
        assert abs(series.values[k] - spectral.values[k]) < 1e-6
        exact = sum(stats.poisson.pmf(n, 2.0) * stats.gamma.pdf(1.0, n) for n in range(1, 80))
        assert series.values[k] == pytest.approx(exact, rel=1e-13)

    def test_start_point(self):
        g = Grid1D.centered(0.0, 32.0, 512, dyadic=True)
        d = compound_poisson_density(1.0, Unit(1.0), 0.0, 1.0, g, x=2.0)
        assert d.atom_locs[0] == 2.0

    @pytest.mark.parametrize("x", [0.3, -2.71])
    def test_off_node_start_keeps_mass(self, x):
        g = Grid1D.centered(0.0, 64.0, 4096, dyadic=True)
        for route in (compound_poisson_density, compound_poisson_density_spectral):
            d = route(1.5, Exponential(2.0), 0.0, 1.0, g, x=x)
            assert abs(d.total_mass() - 1.0) < 1e-9

    def test_time_order(self):
        with pytest.raises(ValidationError):
            compound_poisson_density(1.0, Unit(1.0), 1.0, 1.0, Grid1D(-1.0, 1.0, 8))

    @pytest.mark.parametrize("name", LAWS)
    @pytest.mark.parametrize("lam_tau", [0.5, 1.0, 2.0])
    def test_series_equals_spectral_route(self, name, lam_tau):
        law = LAWS[name]
        g = default_density_grid(JumpDiffusionParams(0.0, 0.0, 1.0, law), lam_tau)
        series = compound_poisson_density(1.0, law, 0.0, lam_tau, g)
        spectral = compound_poisson_density_spectral(1.0, law, 0.0, lam_tau, g)
        assert np.abs(series.rasterized().values - spectral.rasterized().values).max() < 1e-6
        assert series.tail_mass < SeriesTruncation().tail_tolerance


class TestJumpDiffusion:
    def test_no_jump_limit(self):
        g = Grid1D(-10.0, 10.0, 4096)
        p = JumpDiffusionParams(0.3, 0.8, 1e-12, Normal(1.0, 0.5))
        d = jump_diffusion_density(p, 0.0, 2.0, g, x=0.5)
        expected = stats.norm.pdf(g.nodes, 0.5 + 0.6, 0.8 * math.sqrt(2.0))
        assert np.abs(d.values - expected).max() < 1e-10

    def test_binomial_shift_weights(self):
        w = stats.poisson.pmf(np.arange(51), 1.0)
        locs, masses = mixture_atoms(Binomial(2, 0.5), w)
        brute = {k: sum(w[n] * stats.binom.pmf(k, 2 * n, 0.5) for n in range(51)) for k in range(0, 11)}
        got = dict(zip(locs, masses))
        for k in brute:
            assert got[k] == pytest.approx(brute[k], rel=1e-12)
        assert got[0.0] == pytest.approx(math.exp(-0.75), rel=1e-14)
        assert got[0.0] == pytest.approx(BINOMIAL_SHIFT0_WEIGHT, rel=1e-14)

    def test_binomial_density_is_gaussian_mixture(self):
        g = Grid1D(-10.0, 20.0, 4096)
        d = jump_diffusion_density(JumpDiffusionParams(0.0, 1.0, 1.0, Binomial(2, 0.5)), 0.0, 1.0, g)
        w = stats.poisson.pmf(np.arange(51), 1.0)
        weight = [sum(w[n] * stats.binom.pmf(k, 2 * n, 0.5) for n in range(51)) for k in range(0, 40)]
        expected = sum(wk * stats.norm.pdf(g.nodes, k, 1.0) for k, wk in enumerate(weight))
        assert np.abs(d.values - expected).max() < 1e-12

    @pytest.mark.parametrize("delta", [0.2, 1.0])
    def test_normal_jumps_against_fourier_route(self, delta):
        g = Grid1D(-24.0, 24.0, 8192)
        p = JumpDiffusionParams(0.1, 0.4, 1.5, Normal(0.0, delta))
        d = jump_diffusion_density(p, 0.0, 1.0, g)
        prop = full_generator_propagator(DiffusionCoefficients(0.1, 0.16), JumpSpec(1.5, Normal(0.0, delta)),
                                         0.0, 1.0, g)
        assert np.abs(d.values - increment_density(prop).values).max() < 1e-8

    @pytest.mark.parametrize("name", LAWS)
    def test_series_equals_fourier_route_with_diffusion(self, name):
        law = LAWS[name]
        p = JumpDiffusionParams(0.1, 0.3, 1.0, law)
        g = default_density_grid(p, 1.0)
        d = jump_diffusion_density(p, 0.0, 1.0, g)
        prop = full_generator_propagator(DiffusionCoefficients(0.1, 0.09), JumpSpec(1.0, law), 0.0, 1.0, g)
        assert np.abs(d.values - increment_density(prop).values).max() < 1e-6

    @pytest.mark.parametrize("name", LAWS)
    @pytest.mark.parametrize("sigma", [0.3, 1e-9])
    def test_normalization(self, name, sigma):
        p = JumpDiffusionParams(-0.2, sigma, 1.3, LAWS[name])
        d = jump_diffusion_density(p, 0.0, 1.0, default_density_grid(p, 1.0))
        assert abs(d.total_mass() - 1.0) < 1e-8
        assert d.tail_mass < SeriesTruncation().tail_tolerance

    def test_sub_grid_diffusion_gives_atoms(self):
        p = JumpDiffusionParams(0.0, 1e-9, 1.0, Unit(1.0))
        d = jump_diffusion_density(p, 0.0, 1.0, default_density_grid(p, 1.0))
        assert d.notes and "point mass" in d.notes[0]
        np.testing.assert_allclose(d.atom_masses[:6], math.exp(-1) / special.factorial(np.arange(6)), rtol=1e-13)

    def test_sub_grid_pure_diffusion_is_one_atom(self):
        p = JumpDiffusionParams(0.5, 0.2, 0.0, Unit(0.0))
        d = jump_diffusion_density(p, 0.0, 1e-12, Grid1D(-1.0, 1.0, 256), x=0.25)
        assert not d.values.any()
        assert d.atom_masses.tolist() == [1.0] and d.atom_locs[0] == pytest.approx(0.25 + 0.5e-12, abs=1e-16)

    @pytest.mark.parametrize("name", LAWS)
    def test_chapman_kolmogorov(self, name):
        p = JumpDiffusionParams(0.1, 0.3, 1.0, LAWS[name])
        g = default_density_grid(p, 1.0)
        first = jump_diffusion_density(p, 0.0, 0.4, g).rasterized()
        second = jump_diffusion_density(p, 0.4, 1.0, g).rasterized()
        whole = jump_diffusion_density(p, 0.0, 1.0, g).rasterized()
        assert np.abs(convolve(first, second).values - whole.values).max() < 1e-6


class TestMixtureHelpers:
    @pytest.mark.parametrize("x", [0.0, 0.3, 0.7, 2.0, 9.0, 30.0])
    def test_scaled_hermite_functions(self, x):
        kmax = 40
        got = scaled_hh(x, kmax)
        mp.mp.dps = 30
        for k in range(0, kmax + 1, 5):
            ref = mp.quad(lambda t: (t - x) ** k * mp.exp(-(t * t - x * x) / 2), [x, x + 10, mp.inf]) / mp.factorial(k)
            assert got[k + 1, 0] == pytest.approx(float(ref), rel=1e-12)

    @pytest.mark.parametrize("n", [1, 2, 7])
    @pytest.mark.parametrize("z", [-2.0, 0.0, 0.4, 3.0, 12.0])
    def test_gaussian_erlang_convolution(self, n, z):
        rate, s = 1.5, 0.4
        ref = sp_integrate.quad(lambda y: stats.norm.pdf(z - y, 0, s) * stats.gamma.pdf(y, n, scale=1 / rate),
                                0, max(z, 0.0) + 40, epsabs=1e-15, epsrel=1e-12, points=[max(z, 0.0)],
                                limit=200)[0]
        assert float(gauss_erlang_pdf(np.array([z]), n, rate, s)[0]) == pytest.approx(ref, rel=1e-9, abs=1e-15)


class TestFundamentalSolution:
    def test_pure_diffusion_without_discount(self):
        m = LevyModel(100.0, 0.0, 0.2, 1e-12, Normal(0.0, 0.1))
        g = m.default_grid(0.0, 1.0)
        f = fundamental_solution(m, 0.0, 1.0, g)
        expected = stats.norm.pdf(g.nodes, math.log(100.0) - 0.02, 0.2)
        assert np.abs(f.values - expected).max() < 1e-10

    @pytest.mark.parametrize("name", list(family_models()))
    def test_discounted_mass(self, name):
        m = family_models()[name]
        f = fundamental_solution(m, 0.0, 1.0, m.default_grid(0.0, 1.0))
        assert abs(f.total_mass() - math.exp(-0.05)) < 1e-8

    def test_discounted_density_prices_match_series(self, merton_model, call):
        m = merton_model
        g = m.default_grid(0.0, 1.0, 2**14)
        f = fundamental_solution(m, 0.0, 1.0, g)
        payoff = np.maximum(np.exp(g.nodes) - call.strike, 0.0)
        value = integrate(GridFunction(g, payoff * f.values))
        assert value == pytest.approx(price_european_series(m, call), rel=1e-5)
