"""Error types raised across the package.

Everything derives from VarwassError so callers can catch broadly; the
numeric-input errors also derive from ValueError because that is what a
plain-numpy caller would expect from bad arguments.
"""


class VarwassError(Exception):
    """Base class for all package errors."""


class InvalidDomainError(VarwassError, ValueError):
    """Grid construction with a >= b or too few cells."""


class SizeMismatchError(VarwassError, ValueError):
    """An array has the wrong length for the grid it is used with."""


class BoundaryFluxError(VarwassError, ValueError):
    """A face flux carries a nonzero value on a boundary face."""


class ExponentRangeError(VarwassError, ValueError):
    """Exponent field violates the 1 < p- <= p+ < inf bounds (assumption A1)."""


class NonpositiveParameterError(VarwassError, ValueError):
    """A strictly positive scalar parameter (lambda, h, eps, ...) is <= 0."""


class MarginalMismatchError(VarwassError, ValueError):
    """Transport marginals disagree in total mass or length."""


class NonzeroMeanError(VarwassError, ValueError):
    """A tangent vector does not integrate to zero."""


class VanishingDensityError(VarwassError, ValueError):
    """Flux must cross a face where the density vanishes."""


class NumericalBlowupError(VarwassError, RuntimeError):
    """A time integration produced NaN or left the trusted range."""


class ConfigError(VarwassError, ValueError):
    """Experiment configuration could not be parsed (CLI exit code 2)."""


class ConfigValidationError(VarwassError, ValueError):
    """Experiment configuration parsed but violates a constraint (exit 3)."""
