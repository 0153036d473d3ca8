"""Exception hierarchy shared across the package.

ValidationError covers bad inputs and violated preconditions; the CLI maps
it to exit code 1.  Anything else escaping a pipeline is treated as a
runtime failure (exit code 2).
"""


class TimixError(Exception):
    """Base class for all package errors."""


class ValidationError(TimixError):
    """Invalid input or violated precondition."""


# geometry

class NonDivisibleError(ValidationError):
    """Patch size does not evenly divide the image dimensions."""


class GridTooSmallError(ValidationError):
    """Grid must be at least 2 x 2 patches to admit a strict sub-window."""


class OutOfBoundsError(ValidationError):
    """Bounding box lies outside the image or is empty."""


class IndexOutOfRangeError(ValidationError):
    """Patch (row, col) outside the grid."""


# scores

class DimensionMismatchError(ValidationError):
    """Feature dimensions do not match the model."""


class LengthMismatchError(ValidationError):
    """Score and label sequences differ in length."""


class NonFiniteScoreError(ValidationError):
    """Score map contains NaN or infinity."""


# mixer

class WindowTooLargeError(ValidationError):
    """Requested window does not fit inside the grid."""


class ShapeMismatchError(ValidationError):
    """Array shape inconsistent with the patch grid."""


# contrastive

class ZeroNormError(ValidationError):
    """Cosine similarity undefined for a zero vector."""


class BatchTooSmallError(ValidationError):
    """Contrastive batch has no anchors."""


class WeightSumError(ValidationError):
    """Positive weights of an anchor do not sum to 1."""


# mutual information

class DegenerateMarginalError(ValidationError):
    """Joint distribution has a zero-probability marginal symbol."""


class AlphabetTooLargeError(ValidationError):
    """Exact enumeration infeasible; use the Monte-Carlo estimator."""


# synthetic training

class InvalidSpecError(ValidationError):
    """Synthetic dataset specification violates its invariants."""


# data I/O

class MissingFileError(ValidationError):
    """Referenced file does not exist."""


class BadDimensionsError(ValidationError):
    """Image dimensions incompatible with the configured patch size."""


class SchemaError(ValidationError):
    """Malformed record in an input file."""


class VersionMismatchError(ValidationError):
    """Serialized artifact has an unsupported format version."""
