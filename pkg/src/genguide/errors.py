"""Exception hierarchy shared across the package."""

from __future__ import annotations


class GenGuideError(Exception):
    """Base class for all package errors."""


class MalformedRecord(GenGuideError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyStructure(GenGuideError):
    pass


class MissingAtom(GenGuideError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"atom not present in structure: {key}")


class NonFiniteState(GenGuideError):
    pass


class IndexOutOfRange(GenGuideError):
    pass


class ShapeMismatch(GenGuideError):
    pass


class UnknownAtomName(GenGuideError):
    pass


class EmptyGroupAfterMapping(GenGuideError):
    pass


class EmptyRestraintSet(GenGuideError):
    pass


class EmptyTargets(GenGuideError):
    pass


class PredictorFailure(GenGuideError):
    pass


class NoOverlap(GenGuideError):
    pass


class TooShort(GenGuideError):
    pass


class StarSyntaxError(GenGuideError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column or 0}: {message}"
        super().__init__(message)


class UnterminatedLoop(StarSyntaxError):
    pass


class NoNoeLists(GenGuideError):
    pass


class NoSuchAtoms(GenGuideError):
    pass


class DuplicateKey(GenGuideError):
    pass


class ResidueMappingError(GenGuideError):
    pass


class RunAborted(GenGuideError):
    pass


class MonotonicityViolation(GenGuideError):
    pass


class ConfigError(GenGuideError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")
