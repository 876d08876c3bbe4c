"""Exception hierarchy shared across the package."""


class ClickSegError(Exception):
    """Base class for all package errors."""


class EmptyScene(ClickSegError):
    """Operation requires a non-empty point cloud or voxel grid."""


class InvalidInput(ClickSegError):
    """Malformed or inconsistent input data (non-finite coords, bad shapes)."""


class ParseError(ClickSegError):
    """File could not be parsed. Carries a byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class GenerationError(ClickSegError):
    """Synthetic scene generation could not satisfy the requested spec."""


class InvalidRegion(ClickSegError):
    """Click region index out of range for the session."""


class MissingRegion(ClickSegError):
    """A region has no queries and no learnable fallback."""


class InvalidLabel(ClickSegError):
    """Ground-truth label outside the expected range."""


class InvalidState(ClickSegError):
    """Stale tape or otherwise inconsistent internal state."""


class NoErrors(ClickSegError):
    """Signal: prediction matches ground truth, no click to sample."""


class NothingToUndo(ClickSegError):
    """Undo requested on an empty click sequence."""


class NotFound(ClickSegError):
    """Unknown session or resource id."""
