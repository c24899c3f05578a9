"""Exception types shared across the package.

The CLI maps each family onto a process exit code.
"""


class IDGError(Exception):
    exit_code = 1


class ConfigError(IDGError):
    """Bad configuration, incompatible shapes, unknown options."""

    exit_code = 2


class DataError(IDGError):
    """Malformed or missing input data."""

    exit_code = 3


class NumericError(IDGError):
    """Non-finite values encountered during a computation."""

    exit_code = 4

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class DomainError(ValueError, IDGError):
    """Argument outside the mathematical domain of a function."""

    exit_code = 2
