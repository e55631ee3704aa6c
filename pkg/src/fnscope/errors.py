"""Exception hierarchy shared by the library, the service, and the CLI.

Every error that can cross the CLI/service boundary carries a stable
machine-readable ``kind`` so exit codes and HTTP payloads stay consistent.
"""

from __future__ import annotations


class FnscopeError(Exception):
    """Base class for all fnscope errors."""

    kind = "error"


class DumpIOError(FnscopeError):
    """Input file missing, unreadable, or not decodable as UTF-8."""

    kind = "io_error"


class DumpParseError(FnscopeError):
    """A dump or plan record is structurally malformed (bad JSON, wrong type,
    missing or unknown key)."""

    kind = "parse_error"

    def __init__(self, message: str, *, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        super().__init__(self._format(message, line, path))

    @staticmethod
    def _format(message: str, line: int | None, path: str | None) -> str:
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if path:
            loc.append(path)
        if loc:
            return f"{message} ({', '.join(loc)})"
        return message


class InvariantViolation(DumpParseError):
    """A record parsed but violates a semantic invariant (degenerate box,
    score out of range, dangling reference, duplicate id, ...)."""

    kind = "invariant_violation"


class UnsatisfiablePlanError(FnscopeError):
    """The synthesizer exhausted its resampling budget for one planned object."""

    kind = "unsatisfiable_plan"

    def __init__(self, message: str, *, image_id: str | None = None, object_index: int | None = None):
        self.image_id = image_id
        self.object_index = object_index
        super().__init__(message)


class CatalogMismatchError(FnscopeError):
    """Two reports being compared were produced against different class catalogs."""

    kind = "catalog_mismatch"


class PreconditionError(FnscopeError):
    """An operation was invoked on inputs that violate its stated precondition
    (e.g. mechanism classification of an object that was actually detected)."""

    kind = "precondition"
