"""Exception types raised by fpfm."""


class ShapeError(ValueError):
    """An array does not have the shape an operation requires."""


class SingularSystemError(ValueError):
    """A (ridge-regularised) linear system could not be solved stably."""


class DivergenceError(FloatingPointError):
    """A numerical procedure produced non-finite values.

    ``context`` carries whatever locates the failure (step index, distribution
    index, anchor index, sample index) so callers can report it.
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


class CheckpointError(ValueError):
    """A checkpoint file is malformed, truncated or of an unsupported version."""


class ConfigError(ValueError):
    """An experiment configuration is invalid."""
