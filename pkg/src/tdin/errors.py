"""Exception hierarchy shared by all modules.

``ValidationError`` subclasses signal bad inputs (the CLI maps them to exit
code 2); everything else derived from ``TDINError`` is a runtime failure
(exit code 3).
"""


class TDINError(Exception):
    """Base class for all package errors."""


class ValidationError(TDINError, ValueError):
    """Input violates a documented precondition."""


# point processes
class NonPositiveIntensityAtEvent(TDINError):
    pass


class EmptyWindow(ValidationError):
    pass


class InvalidInterval(ValidationError):
    pass


class TimeBeforeLastEvent(ValidationError):
    pass


class BoundViolation(TDINError):
    pass


class DegenerateHorizon(ValidationError):
    pass


class FutureEventInHistory(ValidationError):
    pass


class NonConvergence(TDINError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# graph
class UnknownFirm(ValidationError):
    pass


class OutOfWindow(ValidationError):
    pass


class IoFailure(TDINError):
    pass


# neural
class ShapeMismatch(ValidationError):
    pass


class EmptyNeighborhood(ValidationError):
    pass


class EmptyCandidateSet(ValidationError):
    pass


# model
class DimensionMismatch(ValidationError):
    pass


class NegativeGap(ValidationError):
    pass


class EmptyCandidatePool(ValidationError):
    pass


class UnknownAcquirer(UnknownFirm):
    pass


class CandidateNotAvailable(ValidationError):
    pass


class DivergenceDetected(TDINError):
    pass


# data
class UnknownFirmInDeal(ValidationError):
    pass


class ColumnGloballyMissing(ValidationError):
    pass


class InfeasibleConfig(ValidationError):
    pass


# baseline / evaluation
class InsufficientHistory(ValidationError):
    pass


class SingleClassData(ValidationError):
    pass
