"""Exception hierarchy shared by every module."""


class OrbitMatchError(Exception):
    """Base class for all errors raised by the package."""


class AlphabetMismatchError(OrbitMatchError, ValueError):
    pass


class DimensionMismatchError(OrbitMatchError, ValueError):
    pass


class MetricMismatchError(OrbitMatchError, ValueError):
    pass


class InvalidSpecError(OrbitMatchError, ValueError):
    """A process, map or schedule description violates its invariants."""


class NonConvergenceError(OrbitMatchError, ArithmeticError):
    """Power iteration did not settle; usually a reducible or periodic chain."""


class DegenerateError(OrbitMatchError, ArithmeticError):
    """A numeric quantity is undefined for the given input (zero entropy,
    zero collisions, too few usable points for a fit, ...).

    ``diagnostics`` carries whatever the caller needs to understand why.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(OrbitMatchError, ValueError):
    pass


class MissingSeriesError(OrbitMatchError, FileNotFoundError):
    """A result file needed for post-processing does not exist."""
