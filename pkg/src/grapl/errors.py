"""Exception types shared across the package."""


class GraplError(Exception):
    """Base class for package errors."""


class InputError(GraplError):
    """Unreadable, malformed, or out-of-contract external input."""


class FormatError(InputError):
    """A binary artifact (embedding file, checkpoint, image) failed validation."""
