"""Exception hierarchy shared by all modules.

Every error raised on bad input data derives from :class:`GaitError`; the CLI
maps those to exit code 2.
"""


class GaitError(Exception):
    """Base class for data, format and parameter errors."""


class ParameterError(GaitError, ValueError):
    """An argument is outside its documented domain."""


class FormatError(GaitError):
    """A file is malformed (bad header, truncated chunk)."""


class UnsupportedFormatError(FormatError):
    """A well-formed file uses an encoding this package does not read."""


class SchemaError(GaitError):
    """A manifest record or structured file violates its schema."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class IncompatibleModelError(GaitError):
    """A model file has the wrong version or cannot be decoded."""


class InsufficientDataError(GaitError):
    """Not enough signal, steps or cycles for the requested operation."""


class PairingError(GaitError):
    """Left and right cycles do not come from the same session and index."""


class LayoutError(GaitError):
    """A feature vector layout does not match the model's layout."""


class DegenerateDataError(GaitError):
    """Training data carries no information (e.g. all rows identical)."""


class SizingError(GaitError):
    """A split or sweep asks for more cycles than a subject has."""


class UndefinedMetricError(GaitError):
    """A rate is requested for a class with no samples."""


class TableError(GaitError):
    """A cost stage table lacks a stage required by the scheme."""
