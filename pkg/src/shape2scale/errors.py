"""Exception types raised across the package."""


class S2SError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(S2SError, ValueError):
    pass


class ParameterError(S2SError, ValueError):
    pass


class ShapeError(S2SError, ValueError):
    pass


class DecompositionError(S2SError, ValueError):
    """Matrix is not (numerically) positive definite."""


class RankDeficiencyError(S2SError, ValueError):
    pass


class DegenerateSampleError(S2SError, ValueError):
    pass


class InvalidScatterError(S2SError, ValueError):
    pass


class InvalidLagError(S2SError, ValueError):
    pass


class ConvergenceError(S2SError, RuntimeError):
    """Iteration did not converge; ``last`` holds the final iterate."""

    def __init__(self, message, last=None, n_iter=None):
        super().__init__(message)
        self.last = last
        self.n_iter = n_iter


class EstimationError(S2SError, RuntimeError):
    pass


class ConditioningError(S2SError, RuntimeError):
    pass


class InvariantViolation(S2SError, RuntimeError):
    pass


class FormatError(S2SError, ValueError):
    pass


class UnsupportedByteOrderError(FormatError):
    pass


class ConfigError(S2SError, ValueError):
    pass
