"""Error hierarchy shared by all services.

The CLI maps ``VALIDATION_ERRORS`` to exit code 1 and ``NUMERICAL_ERRORS`` to exit code 2.
"""

from typing import Optional


class VlpError(Exception):
    """Base class for every error raised by this package."""


class ModelDomainError(VlpError, ValueError):
    """Input outside the domain of a model function (coincident points, h <= 0, ...)."""


class ContractViolationError(VlpError, ValueError):
    """Simplified model used outside its ground-plane / vertical-PD contract."""


class SingularGeometryError(VlpError):
    """Measurement geometry does not determine the unknowns."""


class DegenerateEstimateError(VlpError):
    """Calibration produced a zero c-vector; tilt and gain cannot be recovered."""


class UnlocatableError(VlpError):
    """RSS readings carry no position information (nonpositive readings)."""


class UnboundedCrlbError(VlpError):
    """Fisher information is singular, the position is unobservable."""


class GpFitError(VlpError):
    """Kernel matrix stayed indefinite after jitter escalation."""


class ScenarioValidationError(VlpError, ValueError):
    """Scenario document violates a geometric constraint."""


class DatasetParseError(VlpError, ValueError):
    """Measurement file does not follow the ``point_id,x,y,z,rss_*`` schema."""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.row = row
        self.column = column
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        if location:
            message = f"{message} ({', '.join(location)})"
        super().__init__(message)


VALIDATION_ERRORS = (ModelDomainError, ContractViolationError, ScenarioValidationError, DatasetParseError)
NUMERICAL_ERRORS = (SingularGeometryError, DegenerateEstimateError, UnlocatableError, UnboundedCrlbError, GpFitError)
