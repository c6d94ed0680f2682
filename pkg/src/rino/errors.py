"""Exception types raised across the package."""


class RinoError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(RinoError, ArithmeticError):
    pass


class ConvergenceFailure(RinoError, ArithmeticError):
    pass


class NaNGradient(RinoError, FloatingPointError):
    pass


class ShapeMismatch(RinoError, ValueError):
    pass


class DegenerateBasis(RinoError, ArithmeticError):
    pass


class DomainViolation(RinoError, ValueError):
    pass


class FingerprintMismatch(RinoError, ValueError):
    pass


class NoProgress(RinoError, RuntimeWarning):
    """Adding an atom did not reduce the reconstruction error enough."""


class OffGridQuery(RinoError, KeyError):
    pass


class ZeroSignal(RinoError, ValueError):
    pass


class MissingGamma(RinoError, ValueError):
    pass


class RankDeficient(RinoError, ArithmeticError):
    pass


class UnsortedGrid(RinoError, ValueError):
    pass


class NewtonDiverged(RinoError, ArithmeticError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class CFLViolation(RinoError, ArithmeticError):
    pass


class RangeError(RinoError, ValueError):
    pass


class EmptyRow(RinoError, ValueError):
    pass


class EmptyColumn(RinoError, ValueError):
    pass


class ConfigError(RinoError, ValueError):
    pass
