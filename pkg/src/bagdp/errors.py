"""Exception hierarchy shared across the package."""

from __future__ import annotations


class BagdpError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(BagdpError, ValueError):
    """An argument is out of its documented domain."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InfeasibleConfigError(BagdpError, ValueError):
    """A Bagging configuration cannot be realised (e.g. N*k > n without replacement)."""


class EnumerationLimitError(BagdpError, RuntimeError):
    """Exact enumeration would exceed the outcome-space budget."""


class DatasetParseError(BagdpError, ValueError):
    """A dataset file could not be parsed.

    ``location`` is a human readable position such as ``line 7`` or
    ``byte 16``.
    """

    def __init__(self, path: str, location: str, message: str):
        self.path = path
        self.location = location
        super().__init__(f"{path}: {location}: {message}")


class VerificationError(BagdpError, AssertionError):
    """A privacy check that must hold mathematically did not."""
