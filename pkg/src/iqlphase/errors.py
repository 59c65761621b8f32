"""Exception types raised across the package."""


class IQLPhaseError(Exception):
    """Base class for all package errors."""


class UnsupportedCondition(IQLPhaseError, ValueError):
    pass


class InvalidConfig(IQLPhaseError, ValueError):
    pass


class StepAfterDone(IQLPhaseError, RuntimeError):
    pass


class IndexOutOfRange(IQLPhaseError, IndexError):
    pass


class DimensionMismatch(IQLPhaseError, ValueError):
    pass


class NonFiniteGradient(IQLPhaseError, FloatingPointError):
    pass


class WarmupNotReached(IQLPhaseError, RuntimeError):
    pass


class EmptyWindow(IQLPhaseError, ValueError):
    pass


class DegenerateNormalizer(IQLPhaseError, ZeroDivisionError):
    pass


class TooFewPoints(IQLPhaseError, ValueError):
    pass


class MissingRuns(IQLPhaseError, FileNotFoundError):
    pass
