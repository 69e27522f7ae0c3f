"""Exception hierarchy.

Most errors also subclass ``ValueError`` so that code written against the
scikit-learn convention (``except ValueError``) keeps working.
"""


class DecompCPError(Exception):
    """Base class for all package errors."""


class LengthMismatch(DecompCPError, ValueError):
    pass


class EmptySeries(DecompCPError, ValueError):
    pass


class PeriodTooLarge(DecompCPError, ValueError):
    pass


class SeriesTooShort(DecompCPError, ValueError):
    pass


class TooFewPoints(DecompCPError, ValueError):
    pass


class WindowTooLarge(DecompCPError, ValueError):
    pass


class SingularDesign(DecompCPError, ValueError):
    pass


class DimensionMismatch(DecompCPError, ValueError):
    pass


class CoverageFailure(DecompCPError, RuntimeError):
    """Bootstrap resampling left some row in-bag for every model."""


class AllZeroWeights(DecompCPError, ValueError):
    pass


class TooFewRows(DecompCPError, ValueError):
    pass


class NeighborhoodTooLarge(DecompCPError, ValueError):
    pass


class MissingColumn(DecompCPError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NonNumericCell(DecompCPError, ValueError):
    def __init__(self, row, column, value):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"non-numeric value {value!r} in column {column!r} at row {row}")


class EmptyFile(DecompCPError, ValueError):
    pass


class ConfigError(DecompCPError, ValueError):
    pass


class IoFailure(DecompCPError, OSError):
    pass


class EmptySelectionWarning(UserWarning):
    """A weighting scheme selected no calibration point; the interval is infinite."""


class BadArgument(DecompCPError, ValueError):
    """A command-line argument is out of range."""
