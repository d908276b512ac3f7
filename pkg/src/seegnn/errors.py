"""Exception types raised across the package.

Every error that callers are expected to handle derives from
:class:`SeegnnError`, so ``except SeegnnError`` at a boundary (e.g. the CLI)
catches exactly the validation failures and none of the genuine bugs.
"""


class SeegnnError(Exception):
    """Base class for all domain errors."""


# --- dataset / file handling ---------------------------------------------

class MissingFile(SeegnnError):
    pass


class SchemaViolation(SeegnnError):
    pass


class ShapeMismatch(SeegnnError):
    pass


class DuplicateSeizureId(SeegnnError):
    pass


class UnreadableFile(SeegnnError):
    pass


class InvalidConfig(SeegnnError):
    pass


class IoFailure(SeegnnError):
    pass


# --- signal preprocessing -------------------------------------------------

class EmptySignal(SeegnnError):
    pass


class NonPositiveRate(SeegnnError):
    pass


# --- graph construction / metrics ----------------------------------------

class LengthMismatch(SeegnnError):
    pass


class TooShort(SeegnnError):
    pass


class TooFewChannels(SeegnnError):
    pass


class InvalidThreshold(SeegnnError):
    pass


class TooFewNodes(SeegnnError):
    pass


class IndexOutOfRange(SeegnnError):
    pass


class NoThalamicNodes(SeegnnError):
    pass


# --- model / training ------------------------------------------------------

class NonSymmetric(SeegnnError):
    pass


class NegativeWeight(SeegnnError):
    pass


class NonFiniteInput(SeegnnError):
    pass


class LabelOutOfRange(SeegnnError):
    pass


class StaleCache(SeegnnError):
    pass


class InvalidDims(SeegnnError):
    pass


class VersionMismatch(SeegnnError):
    pass


class ClassTooSmall(SeegnnError):
    pass


class NonFiniteLoss(SeegnnError):
    pass


class EmptyMatrix(SeegnnError):
    pass


class InconsistentTruth(SeegnnError):
    pass


class EmptySpace(SeegnnError):
    pass


class UntrainedModel(SeegnnError):
    pass


class EmptyResult(SeegnnError):
    pass


# --- CLI -------------------------------------------------------------------

class UnknownCommand(SeegnnError):
    pass


class BadFlag(SeegnnError):
    pass
