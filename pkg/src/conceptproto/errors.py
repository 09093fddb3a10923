"""Exception hierarchy shared across the package.

Exit codes used by the CLI: 0 success, 2 config error, 3 data error,
4 numeric failure.
"""


class ConceptProtoError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(ConceptProtoError):
    """Invalid configuration, flag combination, or argument value."""

    exit_code = 2


class DataError(ConceptProtoError):
    """Malformed input files or inconsistent dataset contents."""

    exit_code = 3


class DimensionError(ConceptProtoError):
    """Shape or length mismatch between numeric arguments."""

    exit_code = 3


class NumericError(ConceptProtoError):
    """Non-finite values or other numerical failures during compute."""

    exit_code = 4
