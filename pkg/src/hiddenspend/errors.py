"""Exception types shared across the package.

Every error raised on a user-facing path is one of these, so the command
line layer can map failures onto stable exit codes without string matching.
"""


class HiddenSpendError(Exception):
    """Base class for all package errors."""


class ConfigError(HiddenSpendError):
    """Invalid configuration: bad option values, unknown names, bad shapes."""


class DataError(HiddenSpendError):
    """Input data violates a contract (missing columns, bad values, length mismatch)."""


class NumericalError(HiddenSpendError):
    """A numerical routine lost validity (collapsed likelihood, non-PD matrix)."""


class ValidationError(HiddenSpendError):
    """A self-check in the validation suite failed."""
