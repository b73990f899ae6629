"""Exception types shared across the package."""


class RiemflowError(Exception):
    """Base class for every error raised by riemflow."""


class NonFiniteError(RiemflowError):
    """An array contains NaN or Inf where finite values are required."""


class NotPositiveDefiniteError(RiemflowError):
    """A matrix that must be symmetric positive definite is not."""


class DimensionMismatchError(RiemflowError):
    """Operands live on manifolds of different dimension."""


class ShapeMismatchError(RiemflowError):
    """An array does not have the expected shape."""


class AntipodalPairError(RiemflowError):
    """Two quaternions are antipodal, so their geodesic is not unique."""


class GoalMismatchError(RiemflowError):
    """A demonstration does not end at the declared goal."""


class ChartOverflowError(RiemflowError):
    """A tangent vector falls outside the injectivity radius of the chart."""


class ManifoldMismatchError(RiemflowError):
    """A point does not belong to the manifold a model was trained on."""


class SingularCovarianceError(RiemflowError):
    """A covariance matrix is singular and cannot be inverted."""


class TrainingDivergedError(RiemflowError):
    """Training produced non-finite loss twice in a row despite backoff."""


class EmptySequenceError(RiemflowError):
    """A sequence argument is empty."""


class LengthMismatchError(RiemflowError):
    """Two sequences that must have equal length do not."""


class ParseError(RiemflowError):
    """A text input could not be parsed.

    Parameters
    ----------
    message : str
        Description of the problem.
    line : int, optional
        1-based line number in the offending file.
    """

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SchemaError(RiemflowError):
    """A structured file does not match the expected schema."""


class MaxStepsExceededError(RiemflowError):
    """Generation hit the step budget before reaching the goal."""
