"""Exception types shared across the package.

The CLI maps each family to its own exit code, so library code raises the
most specific class that applies.
"""


class ConfigError(ValueError):
    """Invalid run configuration or command-line arguments."""


class DataError(ValueError):
    """Malformed or unsupported input data."""


class ArffError(DataError):
    """ARFF parse failure; carries the offending line number when known."""

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class NumericalError(ArithmeticError):
    """A numerical routine failed (rank deficiency, broken distribution)."""
