"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 2 validation, 3 data, 4 numeric failure.
"""


class StegclError(Exception):
    exit_code = 1


class ValidationError(StegclError):
    """Bad arguments, shapes, thresholds, or configuration."""

    exit_code = 2


class DataError(StegclError):
    """Unreadable, missing, or malformed input data."""

    exit_code = 3


class NumericError(StegclError):
    """NaN or other numeric failure during computation."""

    exit_code = 4


class CheckpointError(DataError):
    """Base for checkpoint file problems."""


class BadMagicError(CheckpointError):
    pass


class BadVersionError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass
