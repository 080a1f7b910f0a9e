"""Exception hierarchy shared by every stafnet module."""


class StafError(Exception):
    """Base class; ``kind`` is the machine-readable tag used in CLI error JSON."""

    kind = "error"


class ShapeError(StafError, ValueError):
    kind = "shape"


class RangeError(StafError, ValueError):
    kind = "range"


class ValidationError(StafError, ValueError):
    kind = "validation"


class NumericError(StafError, ArithmeticError):
    kind = "numeric"


class CapacityError(StafError):
    kind = "capacity"


class PreconditionError(StafError, ValueError):
    kind = "precondition"


class ParseError(StafError, ValueError):
    kind = "parse"

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedError(StafError, ValueError):
    kind = "unsupported"


class UnsupportedFormatError(UnsupportedError):
    pass


class IntegrityError(StafError):
    kind = "integrity"


class DomainError(StafError, ValueError):
    kind = "domain"
