"""Exception hierarchy shared across the toolkit.

Each class maps to one process exit code so the CLI can translate failures
uniformly: usage 2, data 3, numeric 4.
"""


class LmPriorError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class UsageError(LmPriorError):
    """Bad or inconsistent configuration (flags, parameters)."""

    exit_code = 2


class DataError(LmPriorError):
    """Malformed, missing, or inconsistent input data."""

    exit_code = 3


class NumericError(LmPriorError):
    """Non-finite values or degenerate numerical conditions."""

    exit_code = 4
