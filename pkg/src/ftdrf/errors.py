"""Exception hierarchy shared by every ftdrf module."""

from __future__ import annotations


class FTDRFError(Exception):
    """Base class for all errors raised by ftdrf."""


class ValidationError(FTDRFError, ValueError):
    """Input violates a documented precondition or type invariant."""


class FormatError(FTDRFError, ValueError):
    """A file does not conform to the expected on-disk format."""


class ConsistencyError(FTDRFError, ValueError):
    """Two related inputs disagree (e.g. image and label counts)."""


class TruncatedFileError(FTDRFError, OSError):
    """A file ended before the declared payload was read."""

    def __init__(self, path, offset: int, needed: int):
        self.path = str(path)
        self.offset = offset
        self.needed = needed
        super().__init__(
            f"{self.path}: truncated at byte offset {offset} "
            f"(needed {needed} more bytes)"
        )


class IntegrityError(FTDRFError):
    """A model file decoded but failed an invariant check."""


class VersionError(IntegrityError):
    """A model file declares a format version this build cannot read."""


class PersistError(FTDRFError, OSError):
    """Writing a model file failed; carries the destination path."""
