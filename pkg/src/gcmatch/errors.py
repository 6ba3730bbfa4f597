"""Exception types used across the package.

Every failure mode raised by library code derives from :class:`GcmatchError`
so callers (and the CLI) can distinguish data problems from genuine bugs.
"""


class GcmatchError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(GcmatchError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class ContractError(GcmatchError, ValueError):
    """An API precondition was violated (wrong seed, mismatched state, ...)."""


class NumericError(GcmatchError, ArithmeticError):
    """A computation produced non-finite values."""


class ConfigError(GcmatchError, ValueError):
    """Configuration values are out of range or mutually inconsistent."""


class InputError(GcmatchError, ValueError):
    """Runtime inputs violate an operation's precondition."""


class BehindCameraError(GcmatchError, ValueError):
    """A 3D point has non-positive depth in the camera frame."""


class DegenerateSampleError(GcmatchError, ValueError):
    """A minimal solver received a degenerate sample (e.g. collinear points)."""


class InsufficientDataError(GcmatchError, ValueError):
    """Not enough data to run the estimator (e.g. < 4 matches for PnP)."""


class DegenerateBatchError(GcmatchError, ValueError):
    """A loss term has no supervised entries to average over."""


class TrainingError(GcmatchError, RuntimeError):
    """Training diverged (non-finite loss)."""


class FormatError(GcmatchError, ValueError):
    """A serialized file has the wrong magic, version, or structure."""


class SceneValidationError(GcmatchError, ValueError):
    """A scene document violates an invariant; the message names the field."""
