"""Exception types raised across the package."""


class GLEError(Exception):
    """Base class for all package errors."""


class ZeroSeparation(GLEError, ValueError):
    """A singular potential was evaluated at (numerically) zero separation."""


class CoincidentParticles(GLEError, ValueError):
    """Two particles occupy the same position."""


class NegativeTime(GLEError, ValueError):
    pass


class GammaZero(GLEError, ValueError):
    """The overdamped system needs a strictly positive friction."""


class StepRejected(GLEError, RuntimeError):
    """Adaptive halving could not keep the pair distance above the guard.

    ``time`` is the simulation time of the step that failed.
    """

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NonFinite(GLEError, FloatingPointError):
    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class HorizonExceeded(GLEError, ValueError):
    pass


class DimensionMismatch(GLEError, ValueError):
    pass


class NonPositiveRadicand(GLEError, ValueError):
    """The square-root argument of a Lyapunov candidate was not positive.

    Usually means the shift constants of U and G are too small.
    """


class WrongBetaRegime(GLEError, ValueError):
    pass


class RegimeMismatch(GLEError, ValueError):
    pass


class BurnInTooShort(GLEError, RuntimeError):
    pass


class EnsembleTooSmall(GLEError, ValueError):
    pass


class ConfigError(GLEError):
    pass


class ParseError(ConfigError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.line = line
        self.column = column


class ValidationError(ConfigError):
    """Collects every violated rule, not just the first one."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))
