"""Exception hierarchy shared across the package.

Each class carries the CLI exit code it maps to.
"""


class HairError(Exception):
    exit_code = 1


class ParseError(HairError):
    """Malformed input file or token stream."""

    exit_code = 1

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at {offset})"
        super().__init__(message)
        self.offset = offset


class GeometryError(HairError):
    exit_code = 2


class DegenerateGeometryError(GeometryError):
    """Card geometry too degenerate to define frames (e.g. coincident points)."""


class MalformedUnitError(GeometryError):
    """A cross-section does not match the canonical 4-corner diamond."""


class BudgetError(HairError):
    """Token sequence exceeds the configured budget."""

    exit_code = 3
