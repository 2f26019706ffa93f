"""Exception hierarchy shared across the package."""


class RecistSegError(Exception):
    """Base class for all package errors."""


class DegenerateAnnotation(RecistSegError):
    """RECIST diameters are too short, collinear, or otherwise unusable."""


class EmptyInput(RecistSegError):
    """An operation that needs at least one element received none."""


class EmptyMask(RecistSegError):
    """A mask with no foreground pixels where foreground is required."""


class TooSmall(RecistSegError):
    """A connected component is too small for diameter extraction."""


class DimMismatch(RecistSegError):
    """Two grids that must share dimensions do not."""


class ShapeMismatch(RecistSegError):
    """Input shape incompatible with the network layout."""


class CacheMismatch(RecistSegError):
    """Backward pass received a cache inconsistent with the parameters."""


class EmptyDataset(RecistSegError):
    """Training requested on a dataset with no slices."""


class NonFiniteLoss(RecistSegError):
    """Loss or gradient became NaN/Inf during optimization."""


class UndefinedMetric(RecistSegError):
    """Metric undefined for the given inputs (e.g. HD95 with an empty mask)."""


class ParseError(RecistSegError):
    """A data file could not be parsed; message carries the line number."""


class SchemaError(RecistSegError):
    """A data file is missing required columns/fields."""


class InfeasiblePlacement(RecistSegError):
    """Synthetic lesion placement failed after the retry budget."""
