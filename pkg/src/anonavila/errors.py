"""Exception hierarchy.

Every error raised on bad input derives from :class:`NavilaError` so the CLI
can map it to exit code 1. :class:`InvariantViolation` (exit 3) marks
internal consistency failures.
"""


class NavilaError(Exception):
    """Base class for data and validation errors."""


class InvariantViolation(NavilaError):
    """An internal consistency check failed."""


# term pools
class ParseError(NavilaError):
    pass


class ValidationError(NavilaError):
    pass


class CategoryMismatch(NavilaError):
    pass


class IndexOutOfRange(NavilaError, IndexError):
    pass


# embedding files
class FormatError(NavilaError):
    pass


class DimensionError(NavilaError):
    pass


class IntegrityError(NavilaError):
    pass


class MissingTerm(NavilaError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# mlp
class ShapeError(NavilaError):
    pass


class NonFiniteInput(NavilaError):
    pass


class NonFiniteGradient(NavilaError):
    pass


class CacheMismatch(NavilaError):
    pass


# geometry / loss
class ZeroNorm(NavilaError):
    pass


class LengthMismatch(NavilaError):
    pass


class BatchTooSmall(NavilaError):
    pass


# training
class AbnormalInTraining(NavilaError):
    pass


class InsufficientData(NavilaError):
    pass


class CheckFailed(InvariantViolation):
    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst or []


# scoring
class EmptyValidation(NavilaError):
    pass


class AbnormalInValidation(NavilaError):
    pass


# heatmaps
class MissingGrid(NavilaError):
    pass


class DuplicateCell(NavilaError):
    pass


class DegenerateReference(NavilaError):
    pass


# evaluation
class SingleClass(NavilaError):
    pass


class NoPositives(NavilaError):
    pass


class AllFoldsDegenerate(NavilaError):
    pass
