"""Exception hierarchy shared across the package."""


class FourierMoEError(Exception):
    """Base class for all package errors."""


class ParameterError(FourierMoEError, ValueError):
    """An argument violates an operation's precondition."""


class FrequencyRangeError(FourierMoEError, IndexError):
    """A frequency or spatial index lies outside the matrix dimensions."""


class CapacityError(ParameterError):
    """More frequency bins were requested than the spectrum can supply."""


class InputError(FourierMoEError, ValueError):
    """Input data is malformed (wrong shape, non-finite values)."""


class TrainingError(FourierMoEError, RuntimeError):
    """Training cannot continue, e.g. a gradient became non-finite."""

    def __init__(self, message, parameter=None):
        super().__init__(message)
        self.parameter = parameter


class ConfigError(ParameterError):
    """A run configuration failed validation."""


class CheckpointError(FourierMoEError):
    """Base class for checkpoint persistence failures."""


class CheckpointIOError(CheckpointError, OSError):
    """The checkpoint file could not be read or written."""


class CheckpointCorruptError(CheckpointError):
    """Checksum or length validation failed on load."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint was written by an unsupported format version."""
