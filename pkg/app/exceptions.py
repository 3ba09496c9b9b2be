"""
Error hierarchy shared by the services and the CLI.
"""

from typing import Optional


class UBRSError(Exception):
    """Base class for all toolkit errors."""


class ShapeError(UBRSError):
    """Array dimensions do not chain or do not match the model."""


class NumericError(UBRSError):
    """Non-finite values where finite ones are required."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"{message} (row {row})")
        self.row = row


class ConfigurationError(UBRSError):
    """Invalid configuration value or key."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class EmptyDataError(UBRSError):
    """An operation received an empty dataset or table."""


class StarvationError(UBRSError):
    """The sampler found no class with both a source and a target bin populated."""


class UsageError(UBRSError):
    """A valid value used in the wrong phase or domain."""


class DatasetFormatError(UBRSError):
    """A dataset interchange or checkpoint file could not be parsed."""
