"""Exception and warning types shared across the package."""


class IvdesignError(Exception):
    """Base class for all package errors."""


# --- ingestion ---------------------------------------------------------

class MissingColumn(IvdesignError):
    """A column named in the schema mapping is absent from the file."""


class NonNumericCell(IvdesignError):
    """A numeric column contains a value that does not parse; carries the row index."""

    def __init__(self, column: str, row: int, value):
        self.column = column
        self.row = row
        self.value = value
        super().__init__(f"column {column!r}, row {row}: cannot parse {value!r} as a number")


class EmptyDataset(IvdesignError):
    """The input file parsed to zero usable rows."""


# --- design engine -----------------------------------------------------

class DegenerateCovariance(IvdesignError):
    """All covariate columns are constant; no distance can be defined."""


class ConfigInfeasible(IvdesignError):
    """Big-M constants violate M > B > max finite discrepancy."""


class SeparationDetected(UserWarning):
    """Logistic fit produced probabilities pinned at 0/1; scores were clamped."""


# --- matcher -----------------------------------------------------------

class OddDimension(IvdesignError):
    """Perfect matching requires an even number of vertices."""


class TooLarge(IvdesignError):
    """Brute-force enumeration is limited to dimension 12."""


class StructuralViolation(IvdesignError):
    """The optimal pairing used a sink-sink or self edge; M is too small."""


# --- inference ---------------------------------------------------------

class ZeroVariance(IvdesignError):
    """All pair statistics are equal; the variance estimate is zero."""


class LeverageOne(IvdesignError):
    """A hat-matrix leverage is numerically one; tau cannot be rescaled."""


class RankDeficient(UserWarning):
    """Q had linearly dependent columns; the dependent ones were dropped."""


class ZeroDenominator(IvdesignError):
    """The effect-ratio denominator sum of (2Z-1)D is zero for this design."""


class AllZeroGaps(IvdesignError):
    """Every pair has dose gap zero; gamma cannot be calibrated from an odds cap."""


# --- simulator / cli ---------------------------------------------------

class MissingDosePool(IvdesignError):
    """No dose-pool file was supplied and the bundled pool could not be read."""


class EmptySubgroup(IvdesignError):
    """A subgroup predicate selected no complete pairs."""
