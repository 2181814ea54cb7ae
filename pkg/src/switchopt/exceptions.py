"""Exception types shared across the package."""


class SwitchoptError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(SwitchoptError, ValueError):
    """An array argument has the wrong shape."""


class EvaluationFailure(SwitchoptError, RuntimeError):
    """A user-supplied evaluator produced a non-finite value."""


class InfeasiblePoint(SwitchoptError, ValueError):
    """A point violates the feasibility screen of an operation."""


class EnumerationCapExceeded(SwitchoptError, RuntimeError):
    """A combinatorial enumeration would exceed its configured cap."""


class ParseError(SwitchoptError, ValueError):
    """Problem-text parsing failed.  Carries 1-based line/column info."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
