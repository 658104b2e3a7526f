"""Exception hierarchy. The CLI maps these onto exit codes."""


class NanosqueezeError(Exception):
    """Base class for all library errors."""


class InvalidModelError(NanosqueezeError, ValueError):
    """Material model with non-finite or unphysical parameters."""


class DomainError(NanosqueezeError, ValueError):
    """Argument outside the domain of an operation."""


class FitError(NanosqueezeError, RuntimeError):
    """Least-squares fit finished with a residual above threshold."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(NanosqueezeError, RuntimeError):
    """Series or quadrature did not reach the requested tolerance."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report or {}


class ConfigError(NanosqueezeError, ValueError):
    """Malformed or inconsistent scan configuration."""
