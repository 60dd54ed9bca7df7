"""Exception hierarchy shared by every module."""


class DrivePercError(Exception):
    """Base class for all errors raised by driveperc."""


class DimensionError(DrivePercError, ValueError):
    """Shapes of the operands are incompatible."""


class ParameterError(DrivePercError, ValueError):
    """An argument is outside its documented domain."""


class BoundsError(DrivePercError, IndexError):
    """A region falls outside the bounds of an image."""


class FormatError(DrivePercError, ValueError):
    """A file could not be parsed.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedFormatError(FormatError):
    """The file is well formed but uses a feature that is not supported."""


class UnsupportedVersionError(FormatError):
    """A versioned file has a version this build cannot read."""


class StageError(DrivePercError):
    """A lane-pipeline stage failed; ``stage`` names the failing stage."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
