"""Exception hierarchy shared by every pipeline phase."""
from __future__ import annotations


class ItelosError(Exception):
    """Base class; the CLI maps these to exit code 1."""


class PurposeError(ItelosError):
    def __init__(self, message: str, position: tuple[int, int] | None = None):
        self.position = position
        if position is not None:
            message = f"line {position[0]}, column {position[1]}: {message}"
        super().__init__(message)


class DatasetError(ItelosError):
    pass


class SchemaError(ItelosError):
    """An ETG or EG failed to load or validate."""

    def __init__(self, message: str, violations=()):
        self.violations = list(violations)
        if self.violations:
            message += "\n" + "\n".join(f"  - {v}" for v in self.violations)
        super().__init__(message)


class NTriplesError(ItelosError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelingError(ItelosError):
    pass


class ComplianceError(ItelosError):
    """Alignment left dataset attributes without a target property."""

    def __init__(self, orphans):
        self.orphans = list(orphans)
        listing = ", ".join(f"{ds}.{attr} -> {et}.{prop}" for ds, attr, et, prop in self.orphans)
        super().__init__(f"dataset compliance failed; orphaned attributes: {listing}")


class MappingError(ItelosError):
    pass


class QueryError(ItelosError):
    pass


class GateInputError(ItelosError):
    pass
