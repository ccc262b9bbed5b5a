"""Exception hierarchy shared by every drocox module."""


class DroCoxError(Exception):
    """Base class for all errors raised by drocox."""


class ConfigError(DroCoxError, ValueError):
    """Invalid configuration or contract violation on user-supplied options."""


class SchemaError(ConfigError):
    """A CSV file does not contain the requested columns."""


class ParseError(DroCoxError, ValueError):
    """A data row could not be parsed.

    Parameters
    ----------
    row : int
        One-based data row number (the header is row 0).
    message : str
        What went wrong.
    """

    def __init__(self, row, message):
        self.row = row
        super().__init__(f"row {row}: {message}")


class ShapeError(DroCoxError, ValueError):
    """Array dimensions are inconsistent."""


class ContractError(DroCoxError, ValueError):
    """A precondition of an operation was violated by its caller."""


class NumericError(DroCoxError, ArithmeticError):
    """A non-finite value appeared where a finite one is required."""


class SolverError(DroCoxError, RuntimeError):
    """The dual-variable solver failed to bracket its root."""


class UndefinedMetricError(DroCoxError, ValueError):
    """A metric has no well-defined value on the given data."""
