"""Exception types shared across the toolkit."""


class CalibrationError(Exception):
    """Base class for all toolkit errors."""


class BehindCameraError(CalibrationError):
    """A point with non-positive depth was projected."""


class UndistortDivergenceError(CalibrationError):
    """Iterative undistortion did not converge (point outside the invertible region)."""


class DegenerateConfigurationError(CalibrationError):
    """Input geometry does not determine the requested quantity."""


class InsufficientDataError(CalibrationError):
    """Fewer inputs than the estimator's minimum."""


class IllConditionedError(CalibrationError):
    """Estimation problem is numerically ill-conditioned.

    The ``condition`` attribute carries the offending condition number when known.
    """

    def __init__(self, message: str, condition: float | None = None):
        super().__init__(message)
        self.condition = condition


class CheiralityError(CalibrationError):
    """No pose decomposition places the target in front of the camera."""


class DataError(CalibrationError):
    """File or dataset contents violate the schema or the target spec."""


class ScenarioError(CalibrationError):
    """Synthetic scenario generation failed."""
