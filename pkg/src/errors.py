"""
SCKD-Discovery Errors
Exception hierarchy shared by every module.
Desk-scale Novel Class Discovery
"""

from typing import Optional


class SckdError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(SckdError, ValueError):
    """Invalid hyperparameter, config field or dataset setting."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.reason = message
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class SchemaError(ConfigurationError):
    """A CSV schema names columns the file does not have."""


class ContractError(SckdError, ValueError):
    """Shape, dimension or precondition violation by the caller."""


class NumericError(SckdError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class ParseError(SckdError, ValueError):
    """Malformed input file content."""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
