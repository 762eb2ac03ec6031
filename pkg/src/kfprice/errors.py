"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: validation problems exit with 2,
numerical-consistency problems with 3.
"""


class KFError(Exception):
    """Base class for library errors."""


class ValidationError(KFError, ValueError):
    """Invalid model, contract, law or configuration input."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class ConfigurationError(ValidationError):
    """Structurally unusable numerical configuration (e.g. grid size)."""


class CapabilityError(ValidationError):
    """The requested route does not support the given model."""


class ResolutionError(ValidationError):
    """A finite-difference stencil is too coarse for the requested check."""


class NumericalConsistencyError(KFError, ArithmeticError):
    """A numerical result failed an internal consistency check."""


class CoverageError(NumericalConsistencyError):
    """Mass or payoff lies outside the computational grid."""


class WrapAroundError(NumericalConsistencyError):
    """A function does not decay at the grid edges (circular aliasing)."""


class ConvergenceError(NumericalConsistencyError):
    """A series could not be truncated within the allowed number of terms."""


class ResourceError(NumericalConsistencyError):
    """An exact computation would exceed its resource budget."""
