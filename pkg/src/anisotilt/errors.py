"""Exception hierarchy shared by all modules.

Each exception carries the process exit code the CLI maps it to.
"""


class AnisotiltError(Exception):
    exit_code = 3


class ConfigError(AnisotiltError, ValueError):
    """Invalid or inconsistent configuration / parameters (usage error)."""

    exit_code = 2


class DataError(AnisotiltError, ValueError):
    """Malformed, degenerate or unsupported input data."""

    exit_code = 3


class OutOfRangeError(DataError):
    """A lag or separation beyond the tabulated support was requested."""


class NumericalError(AnisotiltError, ArithmeticError):
    exit_code = 4


class QuadratureError(NumericalError):
    """Quadrature failed to converge; keeps the last two estimates."""

    def __init__(self, message, previous=None, last=None):
        super().__init__(message)
        self.previous = previous
        self.last = last


class FitError(NumericalError):
    pass


class ZeroTurbulenceError(NumericalError):
    """A quantity is undefined because the Cn2 profile is identically zero."""


class AliasingError(ConfigError):
    pass


class SpectralValidityError(NumericalError):
    """Correlation inputs do not define a valid (PSD) covariance."""
