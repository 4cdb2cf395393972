"""Exception hierarchy shared by every module of the package."""


class GroundingError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(GroundingError, ValueError):
    exit_code = 2


class DimensionError(GroundingError, ValueError):
    exit_code = 2


class ContractError(GroundingError, ValueError):
    exit_code = 2


class NumericError(GroundingError, FloatingPointError):
    exit_code = 5


class DataError(GroundingError, ValueError):
    exit_code = 4


class FormatError(DataError):
    """Malformed binary file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class EvaluationError(GroundingError, KeyError):
    exit_code = 4

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class LoadError(GroundingError, ValueError):
    exit_code = 3
