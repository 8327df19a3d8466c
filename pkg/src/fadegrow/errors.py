"""Exception hierarchy shared by every module."""


class FadeGrowError(Exception):
    """Base class for all library errors."""


class InvalidTarget(FadeGrowError, ValueError):
    pass


class OverlappingSupports(FadeGrowError, ValueError):
    pass


class SupportMismatch(FadeGrowError, ValueError):
    pass


class IncompleteCoverage(FadeGrowError, ValueError):
    """A rank-r fading matrix leaves some index uncovered (zero column)."""


class DimensionError(FadeGrowError, ValueError):
    pass


class DomainError(FadeGrowError, ValueError):
    pass


class OrderingError(FadeGrowError, ValueError):
    pass


class UnreachableState(FadeGrowError, ValueError):
    pass


class DegenerateReverse(FadeGrowError, ArithmeticError):
    pass


class MagnitudeError(FadeGrowError, OverflowError):
    pass


class ConfigError(FadeGrowError, ValueError):
    pass


class EmptyHistory(FadeGrowError, ValueError):
    pass


class NumericalError(FadeGrowError, ArithmeticError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DataError(FadeGrowError, ValueError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class RangeError(DataError):
    pass
