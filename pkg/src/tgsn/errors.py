"""Exception hierarchy.

Three top-level categories map onto CLI exit codes: configuration problems
(exit 1), data problems (exit 2), numeric failures (exit 3).
"""


class TgsnError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(TgsnError):
    """Invalid or inconsistent configuration."""

    exit_code = 1


class DataError(TgsnError):
    """Invalid, malformed, or degenerate data."""

    exit_code = 2


class NumericError(TgsnError):
    """Numeric failure during computation."""

    exit_code = 3


# -- data_model --------------------------------------------------------------

class ParseError(DataError):
    """Malformed interchange file."""


class ChannelMismatch(ParseError):
    """Declared channel/sample counts disagree with the payload."""


class NonFiniteSample(ParseError):
    """Recording payload contains NaN or infinite samples."""


# -- signal_features ----------------------------------------------------------

class BandOutOfNyquist(ConfigError):
    """A band's upper edge is at or above the Nyquist frequency."""


class EmptyEpochs(DataError):
    """No usable epochs remain after segmentation / error dropping."""


class ZeroVariance(DataError):
    """Feature undefined on a (near-)constant epoch."""


class TooShort(DataError):
    """Epoch too short for the requested template length."""


class NoMatches(DataError):
    """Sample entropy is infinite: no template matches at length m+1."""


class SegmentTooLong(ConfigError):
    """Welch segment does not fit inside the epoch."""


class ZeroPower(DataError):
    """Relative spectral density undefined on an all-zero power vector."""


# -- tensor_autodiff ----------------------------------------------------------

class ShapeError(NumericError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteGradient(NumericError):
    """A gradient fed to the optimizer is NaN or infinite."""


# -- diffusion_augment --------------------------------------------------------

class Diverged(NumericError):
    """Denoiser training loss blew up and stayed up."""


class SamplingDiverged(NumericError):
    """Ancestral sampling produced non-finite intermediates."""


# -- train_eval ---------------------------------------------------------------

class DegenerateLossRatio(NumericError):
    """Task-weight update received a non-positive previous loss."""


class MetricUndefined(DataError):
    """A requested metric is undefined for the given targets (e.g. AUC on a
    single-class test set)."""
