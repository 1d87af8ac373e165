"""Exception types raised by the fewbit package."""

__all__ = ["FewbitError", "NonFiniteResult", "DimensionMismatch", "InvalidBits", "InvalidStep",
           "InvalidLength", "ZeroColumn", "SingularCovariance", "TooLarge", "InvalidState",
           "QuadratureFailure", "ConfigError"]


class FewbitError(Exception):
    """Base class for all package errors."""


class NonFiniteResult(FewbitError, ArithmeticError):
    """A numerical kernel produced a NaN or infinite value."""


class DimensionMismatch(FewbitError, ValueError):
    """Array shapes are inconsistent with each other."""


class InvalidBits(FewbitError, ValueError):
    """ADC resolution outside the supported range."""


class InvalidStep(FewbitError, ValueError):
    """Quantizer step size is not a positive finite number."""


class InvalidLength(FewbitError, ValueError):
    """A block length is too short for the requested operation."""


class ZeroColumn(FewbitError, ValueError):
    """A channel column has zero norm."""


class SingularCovariance(FewbitError, ArithmeticError):
    """A covariance matrix is too ill-conditioned to invert."""


class TooLarge(FewbitError, ValueError):
    """The requested enumeration exceeds the configured size limit."""


class InvalidState(FewbitError, ValueError):
    """A variational state violates its own invariants."""


class QuadratureFailure(FewbitError, ArithmeticError):
    """Numerical quadrature did not reach the requested accuracy."""


class ConfigError(FewbitError, ValueError):
    """An experiment configuration is invalid."""
