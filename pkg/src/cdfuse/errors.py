"""Exception hierarchy shared by all cdfuse modules."""


class CdfuseError(Exception):
    """Base class for every error raised by the library."""


class DomainError(CdfuseError, ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class ConvergenceError(CdfuseError, ArithmeticError):
    """An iterative computation did not reach its tolerance."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ValidationError(CdfuseError, ValueError):
    """Malformed input data (survey tables, trial counts, configs)."""


class FitError(CdfuseError):
    """A method-of-moments fit is infeasible or failed to converge."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class SamplerError(CdfuseError):
    """The Metropolis-Hastings sampler could not make progress."""


class CombinationError(CdfuseError):
    """Two confidence distributions cannot be combined."""


class UsageError(CdfuseError, TypeError):
    """An operation was called with an incompatible object."""
