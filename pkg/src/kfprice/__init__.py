"""Kolmogorov-Feller transition densities and jump-diffusion option pricing."""

from .errors import (
    CapabilityError,
    ConvergenceError,
    CoverageError,
    KFError,
    NumericalConsistencyError,
    ResourceError,
    ValidationError,
    WrapAroundError,
)
from .grid_fourier import Grid1D, GridFunction, convolve, forward_transform, integrate, inverse_transform
from .jump_laws import (
    Binomial,
    Discrete,
    Erlang,
    Exponential,
    Geometric,
    Normal,
    Poisson,
    Unit,
    characteristic_function,
    convolve_law,
    parse_law,
)
from .kf_solver import (
    DiffusionCoefficients,
    JumpSpec,
    Propagator,
    compose,
    diffusion_propagator,
    jump_propagator,
    solve_terminal,
)
from .transition_density import (
    JumpDiffusionParams,
    SeriesTruncation,
    compound_poisson_density,
    fundamental_solution,
    jump_diffusion_density,
)
from .pricing import (
    LevyModel,
    OptionContract,
    PriceResult,
    price,
    price_by_quadrature,
    price_down_and_out_call,
    price_european_series,
)
from .mc_oracle import McConfig, McResult, mc_price, simulate_barrier, simulate_terminal

__version__ = "0.1.0"
