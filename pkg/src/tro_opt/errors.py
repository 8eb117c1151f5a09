"""Exception hierarchy.

Every error raised on purpose by the library derives from ``TroError`` so the
CLI can map it to an exit code.
"""


class TroError(Exception):
    exit_code = 1


class InvalidInputError(TroError, ValueError):
    """Argument violates a precondition (shape, range, finiteness)."""

    exit_code = 3


class DegenerateDataError(TroError, ValueError):
    """Data makes a numeric construction ill-defined (isolated points, all-equal points)."""

    exit_code = 4


class FormatError(TroError, ValueError):
    """Malformed input file or edge list."""

    exit_code = 3


class ConfigError(TroError, ValueError):
    exit_code = 2


class UnsupportedError(TroError, NotImplementedError):
    exit_code = 2
