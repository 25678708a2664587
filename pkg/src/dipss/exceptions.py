"""Exception hierarchy.

Errors fall in two families that the CLI maps to exit codes: data errors (bad
inputs, shapes, missing categories) exit with 2, numeric failures (divergence,
degenerate geometry) exit with 3.
"""


class DipssError(Exception):
    exit_code = 2


class DataError(DipssError, ValueError):
    exit_code = 2


class NumericError(DipssError, ArithmeticError):
    exit_code = 3


# volume-core
class UnreadableFile(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class MissingSlices(DataError):
    pass


class DuplicateCaseId(DataError):
    pass


class ShapeIncompatible(DataError):
    pass


# phantoms / preprocessing
class InvalidProfile(DataError):
    pass


class DegenerateInput(DataError):
    pass


class OddDimension(DataError):
    pass


class NoConvergence(NumericError):
    pass


# training
class EmptyBatch(DataError):
    pass


class EmptyPool(DataError):
    pass


class MissingClass(DataError):
    pass


class ClassOutOfRange(DataError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}


# evaluation
class EmptyMask(DataError):
    pass


class MissingAnchorCategory(DataError):
    pass


class ZeroAnchorDistance(NumericError):
    pass


class TooFewMembers(DataError):
    pass


class EmptyCategory(DataError):
    pass


class TooFewPoints(DataError):
    pass


class SingleCluster(DataError):
    pass


class FoldCountMismatch(DataError):
    pass


class EmptyConfusion(DataError):
    pass


# pipeline
class TooFewCases(DataError):
    pass


class EmptyStore(DataError):
    pass


class CorruptCheckpoint(DataError):
    pass


class InvalidConfig(DataError):
    pass


class DisconnectedGraph(UserWarning):
    """Warning category: the kNN graph has more than one connected component."""
