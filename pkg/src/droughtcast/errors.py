"""Exception types shared across the package.

The CLI maps these onto process exit codes: usage errors -> 1,
DataError and subclasses -> 2, DivergenceError -> 3.
"""


class DroughtcastError(Exception):
    """Base class for package errors."""


class DataError(DroughtcastError):
    """A data file or data set cannot be used as requested."""


class FormatError(DataError):
    """A file does not match its declared container format."""


class CorruptionError(FormatError):
    """A file matches the format header but its payload is damaged."""


class UnsupportedVersionError(FormatError):
    """A file declares a container version this build cannot read."""


class EmptyDataError(DataError):
    """An operation received no valid entries to work with."""


class DivergenceError(DroughtcastError):
    """Numerical training produced a non-finite loss."""
