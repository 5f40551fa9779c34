"""
errors.py - exception types raised by the mixline library.

Every error the library raises derives from MixlineError so callers
(the hub CLI in particular) can map failures onto exit codes.
"""

#####################################
# Import Modules
#####################################

from dataclasses import dataclass
from typing import Optional


#####################################
# Base and numeric errors
#####################################


class MixlineError(Exception):
    """Base class for all mixline errors."""


class InvalidParameterError(MixlineError, ValueError):
    """A component, forecast or argument was built with invalid values."""


class WeightError(InvalidParameterError):
    """Weights are negative, zero where positivity is required, or do not sum to 1."""


class DegenerateSampleError(MixlineError, ValueError):
    """A sample has too few draws or zero spread for the requested operation."""


class MassDeficitError(MixlineError, ValueError):
    """A mixture places too little mass inside the requested bin edges."""


class BracketError(MixlineError, ArithmeticError):
    """Quantile inversion could not bracket the requested probability."""


class QuadratureError(MixlineError, ArithmeticError):
    """Numeric integration did not reach the requested accuracy."""


class FittingError(MixlineError):
    """A mixture fit could not be started or completed."""


class InsufficientDataError(FittingError, ValueError):
    """The forecast carries too little information for the requested fit."""


class EnsembleError(MixlineError, ValueError):
    """Ensemble inputs are inconsistent (lengths, grids, key sets)."""


#####################################
# Submission file errors
#####################################


class SubmissionStructureError(MixlineError):
    """A submission or truth file is unreadable or lacks required columns."""


@dataclass(frozen=True)
class ValidationIssue:
    """One problem found while validating a submission file."""

    row: Optional[int]
    column: Optional[str]
    key: Optional[str]
    message: str

    def __str__(self) -> str:
        where = []
        if self.row is not None:
            where.append(f"row {self.row}")
        if self.column is not None:
            where.append(f"column '{self.column}'")
        if self.key is not None:
            where.append(f"forecast {self.key}")
        prefix = ", ".join(where)
        return f"{prefix}: {self.message}" if prefix else self.message


class SubmissionValidationError(MixlineError):
    """A submission file parsed but one or more forecasts are invalid."""

    def __init__(self, issues: list[ValidationIssue]):
        self.issues = list(issues)
        summary = "; ".join(str(issue) for issue in self.issues[:5])
        more = len(self.issues) - 5
        if more > 0:
            summary += f"; ... and {more} more"
        super().__init__(f"{len(self.issues)} validation issue(s): {summary}")


class UnsupportedRuleError(MixlineError, ValueError):
    """A scoring rule was requested for a forecast type it cannot score."""
