"""Error handling module for the nowcasting pipeline.

This module provides the exception hierarchy raised by every package in the
project and helpers the CLI uses to turn them into a single machine-parsable
line and a process exit code.
"""

from typing import Optional


class NowcastError(Exception):
    """Base exception for all pipeline errors."""

    code = "error"

    def __init__(self, message: str, original_error: Optional[Exception] = None) -> None:
        """Initialize pipeline error.

        Args:
            message: Human-readable error message
            original_error: Original exception that caused this error
        """
        self.original_error = original_error
        super().__init__(message)


class MalformedInputError(NowcastError):
    """Raised when raw input values fall outside their documented domain."""

    code = "malformed-input"


class GridRangeError(NowcastError):
    """Raised when an index, window or timestep lies outside the valid range."""

    code = "range"


class ShapeError(NowcastError):
    """Raised when array shapes disagree with an operation's contract."""

    code = "shape"


class FormatError(NowcastError):
    """Raised when a binary file does not follow its declared layout.

    The byte offset at which decoding failed is kept for diagnostics.
    """

    code = "format"

    def __init__(
        self, message: str, offset: int, original_error: Optional[Exception] = None
    ) -> None:
        """Initialize format error.

        Args:
            message: Description of the violation
            offset: Byte offset where the violation was detected
            original_error: Original exception that caused this error
        """
        self.offset = offset
        super().__init__(f"{message} (at byte {offset})", original_error)


class ConfigError(NowcastError):
    """Raised for invalid configuration values or unknown configuration keys."""

    code = "config"


class ContractError(NowcastError):
    """Raised when a caller violates a sequence-length or horizon contract."""

    code = "contract"


class UsageError(NowcastError):
    """Raised when an API is used in the wrong state (e.g. backward on a non-scalar)."""

    code = "usage"


class MissingStageError(NowcastError):
    """Raised when a pipeline stage runs before the artifact it depends on exists.

    This error is NOT retryable; the named stage must be run first.
    """

    code = "missing-stage"

    def __init__(self, artifact: str, original_error: Optional[Exception] = None) -> None:
        """Initialize missing-stage error.

        Args:
            artifact: Name of the absent artifact (e.g. ``ae.ckpt``)
            original_error: Original exception that caused this error
        """
        self.artifact = artifact
        super().__init__(f"{ERROR_MESSAGES['missing-stage']}: {artifact}", original_error)


class LoadError(NowcastError):
    """Raised when a checkpoint exists but cannot be matched to the configured model."""

    code = "load"


class LockError(NowcastError):
    """Raised when the checkpoint directory is held by another command.

    This error is retryable; another process may release the lock shortly.
    """

    code = "lock"


ERROR_MESSAGES = {
    "malformed-input": "input values outside their documented domain",
    "range": "index or window out of range",
    "shape": "array shapes do not match",
    "format": "file does not follow the declared binary layout",
    "config": "invalid configuration",
    "contract": "sequence contract violated",
    "usage": "operation used in the wrong state",
    "missing-stage": "required artifact is missing, run its stage first",
    "load": "checkpoint does not match the configured model",
    "lock": "checkpoint directory is locked by another command",
    "error": "unexpected error",
}

_EXIT_CODES = {
    "config": 2,
    "usage": 2,
    "contract": 2,
    "missing-stage": 3,
    "load": 3,
    "format": 4,
    "malformed-input": 4,
    "lock": 5,
}


def format_cli_error(error: Exception) -> str:
    """Render an exception as a single machine-parsable line.

    Args:
        error: Exception raised by a command

    Returns:
        Line of the form ``error=<code> message="<text>"``
    """
    code = error.code if isinstance(error, NowcastError) else "error"
    message = " ".join(str(error).split()).replace('"', "'")
    return f'error={code} message="{message}"'


def exit_code_for(error: Exception) -> int:
    """Map an exception to a nonzero process exit status.

    Args:
        error: Exception raised by a command

    Returns:
        Exit status
    """
    if isinstance(error, NowcastError):
        return _EXIT_CODES.get(error.code, 1)
    return 1


def is_retryable_error(error: Exception) -> bool:
    """Check if an error is retryable.

    Args:
        error: Exception instance

    Returns:
        True if the error should be retried
    """
    return isinstance(error, LockError)
