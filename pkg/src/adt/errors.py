"""Structured exception types shared across the package.

Every error raised on a documented failure path derives from AdtError so the
CLI can report a single machine-parsable line and exit nonzero instead of
crashing with a traceback.
"""


class AdtError(Exception):
    """Base class for all structured errors raised by this package."""

    kind = "error"

    def one_line(self) -> str:
        return f"{self.kind}: {self}"


class DimensionError(AdtError):
    """Shapes or lengths incompatible with the requested operation."""

    kind = "dimension"


class DomainError(AdtError):
    """Numeric input outside an operation's domain (log of 0, divide by 0)."""

    kind = "domain"


class InputError(AdtError):
    """Invalid argument or precondition violation at a module boundary."""

    kind = "input"


class AlignmentInfeasibleError(AdtError):
    """CTC target cannot be aligned within the available frames."""

    kind = "alignment-infeasible"


class FormatError(AdtError):
    """Malformed or truncated on-disk data (tensor files, indexes, CSVs)."""

    kind = "format"


class ConfigError(AdtError):
    """Unknown, missing, or ill-typed run-configuration key."""

    kind = "config"
