"""Exception types shared across the package."""


class MissCovError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MissCovError):
    """Operands have incompatible or invalid dimensions."""


class NumericInputError(MissCovError):
    """An input contains non-finite entries or violates a numeric invariant."""


class NotPositiveDefiniteError(NumericInputError):
    """A matrix required to be positive definite is not."""


class ConvergenceError(MissCovError):
    """An iterative solver did not reach its tolerance within the iteration cap.

    Carries the last iterate and the residual (or gradient) norm at abort so
    callers can inspect or resume.
    """

    def __init__(self, message, last_iterate=None, residual_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual_norm = residual_norm


class ConditioningError(MissCovError):
    """A linear system or matrix function is numerically singular beyond the jitter policy."""


class IncompleteInputError(MissCovError):
    """Data with missing entries was passed to an operation requiring complete data."""


class DegenerateEstimateError(MissCovError):
    """A covariance estimate could not be made positive definite by the ridge policy."""


class PoolExhaustedError(MissCovError):
    """The neighbor pool has too few usable candidates for a channel."""

    def __init__(self, message, channel=None):
        super().__init__(message)
        self.channel = channel


class EmptyMaskError(MissCovError):
    """A mask retaining no channel was applied."""


class EmptyTrialError(MissCovError):
    """An injection would remove every channel of a trial."""


class UnidentifiableChannelError(MissCovError):
    """Some channel is kept by no mask, so the masked mean is not identifiable there."""


class InvalidScenarioError(MissCovError):
    """A missing-data scenario configuration is internally inconsistent."""


class ApplicabilityError(MissCovError):
    """The requested pipeline is not applicable under the given scenario."""


class StratificationError(MissCovError):
    """A class is too small to be split across the requested number of folds."""


class DatasetFormatError(MissCovError):
    """A dataset or results file is malformed.

    The message carries file path and, where available, line/column context.
    """
