"""Exception types shared across the package."""


class MSMTError(Exception):
    """Base class for package errors."""


class ShapeError(MSMTError, ValueError):
    """Operand shapes are incompatible."""


class MaskError(MSMTError, ValueError):
    """A mask leaves no valid position where at least one is required."""


class NumericError(MSMTError, ArithmeticError):
    """A non-finite value was produced or consumed."""


class ValidationError(MSMTError, ValueError):
    """Input data or configuration failed validation.

    ``problems`` holds one message per offending item so callers can report
    every failure at once instead of stopping at the first.
    """

    def __init__(self, message, problems=None):
        self.problems = list(problems or [])
        if self.problems:
            message = message + "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(message)
