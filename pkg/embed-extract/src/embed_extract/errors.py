"""Exception hierarchy with one process exit code per failure class.

The extractor adds an environment class (exit 5) for failures outside the
input data: a missing optional dependency or an unloadable encoder model.
"""


class ExtractError(Exception):
    """Base class for all extractor errors."""

    exit_code = 1


class UsageError(ExtractError):
    """Bad or inconsistent configuration (flags, parameters)."""

    exit_code = 2


class DataError(ExtractError):
    """Malformed, missing, or inconsistent input data."""

    exit_code = 3


class EnvironmentFailure(ExtractError):
    """Encoder dependency missing or model not loadable on this machine."""

    exit_code = 5
