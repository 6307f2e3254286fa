"""Exception hierarchy shared by every speakerid module.

Each error carries the process exit code the command line reports for it:
1 for usage/configuration problems, 2 for data problems.
"""


class SpeakerIdError(Exception):
    """Base class of all toolkit errors."""

    exit_code = 2


class ConfigError(SpeakerIdError):
    """Invalid configuration file, flag or parameter combination."""

    exit_code = 1


class DataError(SpeakerIdError):
    """Input data that cannot be processed."""

    exit_code = 2


class InvalidInputError(DataError, ValueError):
    """An operation precondition on values was violated."""


class AudioFormatError(DataError):
    """Unsupported or unreadable audio file."""


class ManifestError(DataError):
    """Malformed manifest, optionally pointing at the offending line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DegenerateFrameError(DataError):
    """Silent frame or non positive-definite autocorrelation."""


class SingularCovarianceError(DataError):
    """Covariance matrix not positive definite after the ridge."""


class DimensionMismatchError(DataError, ValueError):
    """Feature dimensions (or chains) of model and test data disagree."""


class ChainError(SpeakerIdError, ValueError):
    """Unknown parameterization or an ill-formed transform chain."""

    exit_code = 1


class InsufficientDataError(DataError):
    """Fewer observations than an operation requires."""

    def __init__(self, what: str, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"{what}: {required} required, {available} available")
