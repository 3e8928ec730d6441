"""
Exception hierarchy for vinecc.

Every error carries the process exit code the CLI reports for it.
Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Any, Dict, Iterable, Optional


class VineccError(Exception):
    """Base class for all vinecc errors."""

    exit_code = 1


class FormatError(VineccError):
    """Input bytes could not be decoded (JSON, RLE, NPY, CSV...)."""

    exit_code = 2

    def __init__(self, message: str, offset: Optional[int] = None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class RangeError(FormatError):
    """Decoded values fall outside their permitted range."""


class ArgumentError(VineccError, ValueError):
    """A precondition on an argument was violated."""

    exit_code = 2


class EmptyMaskError(ArgumentError):
    """An operation that needs at least one set pixel got an empty mask."""


class ValidationError(VineccError):
    """Parsed data violates a cross-record invariant."""

    exit_code = 3

    def __init__(self, message: str, ids: Iterable[Any] = ()):
        self.ids = sorted(set(ids), key=repr)
        if self.ids:
            message = f"{message}: {', '.join(str(i) for i in self.ids)}"
        super().__init__(message)


class FitError(VineccError):
    """Curve fitting failed; diagnostics describe where it stopped."""

    exit_code = 4

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
