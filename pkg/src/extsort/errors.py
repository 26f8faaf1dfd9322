"""Exception hierarchy shared by every stage of the sorter."""

from __future__ import annotations


class SortError(Exception):
    """Base class for all errors raised by extsort."""


class MalformedInputError(SortError, ValueError):
    """Input bytes do not form whole 100-byte records."""


class InternalInvariantError(SortError, AssertionError):
    """A structural invariant was violated; indicates a bug, not bad input."""


class BudgetExhaustedError(SortError, MemoryError):
    """The buffer pool cannot satisfy a lease within the memory budget."""


class ConfigurationError(SortError, ValueError):
    """A knob combination cannot produce a runnable plan."""


class DataIntegrityError(SortError):
    """Data that must be key-sorted was found out of order."""


class UsageError(SortError):
    """An API was called in a way its contract forbids."""


class StageError(SortError):
    """Wraps a failure with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause
