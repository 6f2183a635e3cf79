"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MrssmError(Exception):
    """Base class for all package errors."""


class ValidationError(MrssmError, ValueError):
    """Invalid user input. ``fields`` lists the offending field paths."""

    def __init__(self, message: str, fields: list[str] | None = None):
        self.fields = list(fields or [])
        super().__init__(message)


class DimensionError(ValidationError):
    """A matrix or vector has the wrong shape.

    ``name`` is the offending matrix (e.g. ``"transition"``).
    """

    def __init__(self, name: str, expected, actual):
        self.name = name
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"{name}: expected shape {expected}, got {actual}", fields=[name]
        )


class NumericalSingularityError(MrssmError, ArithmeticError):
    """A matrix that must be inverted is singular or too ill-conditioned."""

    def __init__(self, name: str, condition: float):
        self.name = name
        self.condition = condition
        super().__init__(f"{name} is numerically singular (condition number {condition:.3g})")


class DataError(MrssmError):
    """Base for data ingestion problems."""


class DataFileNotFoundError(DataError, FileNotFoundError):
    pass


class TimestampParseError(DataError, ValueError):
    def __init__(self, row: int, text: str):
        self.row = row
        self.text = text
        super().__init__(f"row {row}: cannot parse timestamp {text!r}")


class NonMonotonicTimestampError(DataError, ValueError):
    def __init__(self, row: int, text: str):
        self.row = row
        self.text = text
        super().__init__(f"row {row}: timestamp {text!r} is not after the previous row")


class MissingColumnError(DataError, KeyError):
    def __init__(self, column: str, available: list[str]):
        self.column = column
        super().__init__(f"column {column!r} not found (have {available})")

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return self.args[0]
