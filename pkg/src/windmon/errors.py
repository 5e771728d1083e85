"""Exception types shared across the package.

The CLI maps these onto process exit codes (config 2, data 3, numeric 4).
"""


class WindmonError(Exception):
    """Base class for all package errors."""


class ConfigError(WindmonError):
    """Invalid configuration: bad fractions, widths, mismatched architectures."""


class ShapeError(ConfigError):
    """Array or vector dimensions inconsistent with the declared layout."""


class DataError(WindmonError):
    """Problem with input data: empty sets, unparseable rows, bad timestamps."""


class SchemaError(DataError):
    """A required column or schema entry is missing or malformed."""


class DomainError(WindmonError):
    """Argument outside the mathematical domain of an operation."""


class NumericError(WindmonError):
    """Non-finite value encountered during computation."""
