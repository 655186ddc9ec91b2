"""Exception types shared across the package."""


class SilsError(Exception):
    """Base class for package errors."""


class InvalidInputError(SilsError, ValueError):
    """Operands violate an operation's preconditions (shape/range mismatch)."""


class ConfigError(SilsError, ValueError):
    """A configuration value is out of its legal range."""


class ShapeError(SilsError, ValueError):
    """Tensor dimensions are incompatible with a network profile."""


class RenderError(SilsError, RuntimeError):
    """The synthetic renderer could not produce a valid scene."""


class SplitError(SilsError, ValueError):
    """A dataset split cannot satisfy the non-overlap requirement."""


class SamplingError(SilsError, RuntimeError):
    """Batch sampling exhausted its retry budget."""


class CheckpointError(SilsError, RuntimeError):
    """A checkpoint is missing, corrupt, or built for another profile."""


class NonFiniteError(SilsError, RuntimeError):
    """A loss or gradient became NaN/Inf during training."""
