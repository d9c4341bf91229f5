"""Exception hierarchy used across the package."""


class KsJkoError(Exception):
    """Base class for all package errors."""


class InvalidResolutionError(KsJkoError, ValueError):
    pass


class DomainError(KsJkoError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ParameterError(KsJkoError, ValueError):
    pass


class GridMismatchError(KsJkoError, ValueError):
    pass


class MarginalError(KsJkoError, ValueError):
    """Two measures that should share total mass do not."""


class SizeError(KsJkoError, ValueError):
    """Instance too large for an exact/brute-force routine."""


class BlowUpDomainError(KsJkoError, ValueError):
    pass


class SolverError(KsJkoError, RuntimeError):
    """An iterative solver failed; ``residual`` carries the last residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class ConvergenceError(SolverError):
    pass


class CFLError(SolverError):
    pass


class ConfigurationError(KsJkoError, ValueError):
    """Invalid run configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
