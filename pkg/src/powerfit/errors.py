"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: data-shaped problems exit 2,
numeric failures exit 3.
"""


class PowerFitError(Exception):
    """Base class for all errors raised by this package."""


class DataError(PowerFitError):
    """Inputs are malformed or structurally inconsistent."""


class DimensionError(DataError, ValueError):
    pass


class StructureError(DataError):
    """A model does not have the layer structure an operation requires."""


class ParseError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ValidationError(DataError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class NumericError(PowerFitError, ArithmeticError):
    """A computation produced a non-finite or out-of-domain value."""


class DomainError(NumericError, ValueError):
    pass


class SolverError(NumericError):
    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class TrainingError(NumericError):
    pass


class RangeError(NumericError, OverflowError):
    pass
