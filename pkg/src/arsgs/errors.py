"""Exception types shared across the package."""


class ArsgsError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(ArsgsError, ValueError):
    pass


class NoConvergence(ArsgsError, RuntimeError):
    pass


class ZeroVector(ArsgsError, ArithmeticError):
    pass


class SingularBlock(NotPositiveDefinite):
    pass


class InvalidEpsilon(ArsgsError, ValueError):
    pass


class ZeroDirection(ArsgsError, ArithmeticError):
    pass


class SkippedEpoch(ArsgsError):
    """Raised when an adaptation epoch cannot run (degenerate covariance or flat direction)."""


class NumericalUnderflow(ArsgsError, ArithmeticError):
    pass


class ZeroVariance(ArsgsError, ValueError):
    pass


class TooShort(ArsgsError, ValueError):
    pass


class WorkerPanic(ArsgsError, RuntimeError):
    pass


class ConfigError(ArsgsError, ValueError):
    pass
