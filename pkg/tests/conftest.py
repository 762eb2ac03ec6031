"""Shared models and contracts for the test suite."""

import pytest

from kfprice import LevyModel, Normal, OptionContract

S0, K0, R0, SIGMA0, TAU0, B0 = 100.0, 100.0, 0.05, 0.2, 1.0, 90.0


@pytest.fixture
def bs_model():
    return LevyModel(S0, R0, SIGMA0)


@pytest.fixture
def merton_model():
    return LevyModel(S0, R0, SIGMA0, 1.0, Normal(-0.1, 0.15))


@pytest.fixture
def call():
    return OptionContract("call", K0, TAU0)


@pytest.fixture
def barrier_call():
    return OptionContract("down_and_out_call", K0, TAU0, barrier=B0)


def family_models():
    """One risk-neutral model per jump law, with a transform that keeps c(z) > -1."""
    from kfprice import Binomial, Discrete, Exponential, Geometric, Poisson, Unit

    return {
        "unit": LevyModel(S0, R0, SIGMA0, 0.5, Unit(-0.2)),
        "discrete": LevyModel(S0, R0, SIGMA0, 1.0, Discrete(((-0.2, 0.3), (0.05, 0.2), (0.1, 0.5)))),
        "geometric": LevyModel(S0, R0, SIGMA0, 0.3, Geometric(0.5), "identity"),
        "binomial": LevyModel(S0, R0, SIGMA0, 0.5, Binomial(3, 0.5), "identity"),
        "poisson": LevyModel(S0, R0, SIGMA0, 0.5, Poisson(0.5), "identity"),
        "exponential": LevyModel(S0, R0, SIGMA0, 0.5, Exponential(5.0)),
        "exponential_identity": LevyModel(S0, R0, SIGMA0, 0.5, Exponential(5.0), "identity"),
        "normal": LevyModel(S0, R0, SIGMA0, 1.0, Normal(-0.1, 0.15)),
    }
