"""Exception hierarchy.

Two families matter to the command line: :class:`ValidationError` (bad
inputs, exit code 2) and :class:`NumericError` (failures while computing,
exit code 3).
"""


class ItemVoiceError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(ItemVoiceError):
    """Input data or configuration violates a documented contract."""


class NumericError(ItemVoiceError):
    """A computation produced or received values it cannot handle."""


# corpus_io
class UnsupportedFormat(ValidationError):
    pass


class CorruptFile(ValidationError):
    pass


class ManifestError(ValidationError):
    pass


class SplitLeak(ManifestError):
    pass


class MissingScore(ManifestError):
    pass


class ScoreOutOfRange(ManifestError):
    pass


class TotalMismatch(ManifestError):
    pass


class EmptyManifest(ManifestError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonFiniteValue(ValidationError):
    pass


# dsp / segmentation
class TooShort(ValidationError):
    pass


class DegenerateFilter(ValidationError):
    pass


# autodiff / models
class ShapeMismatch(ValidationError):
    pass


class InvalidRate(ValidationError):
    pass


class InvalidTarget(ValidationError):
    pass


class BadSequenceLength(ShapeMismatch):
    pass


class NonFiniteGradient(NumericError):
    pass


class CheckpointError(ValidationError):
    pass


class MissingCheckpoint(CheckpointError):
    pass


# training / evaluation
class EmptySplit(ValidationError):
    pass


class EmptyGrid(ValidationError):
    pass


class IncompleteDecisions(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class SingleClassTrainSplit(UserWarning):
    """Training labels are all identical; the trained model is flagged degenerate."""
