"""
Result rows of the Monte Carlo studies.
"""

from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field


class IntegralMethod(str, Enum):
    """How the time integral of the OU path is evaluated."""
    TRAPEZOID = "trapezoid"
    EXACT = "exact"


class VarianceRow(BaseModel):
    """Variance of (t/delta)(theta_hat_delta(t) - theta_hat(t)) at one step size."""

    model_config = ConfigDict(frozen=True)

    t: float = Field(..., gt=0)
    delta: float = Field(..., gt=0)
    samples: int = Field(..., ge=1, description="ceil(t/delta) sample points")
    replications: int = Field(..., ge=2)
    variance: float = Field(..., ge=0, description="Monte Carlo variance")
    std_error: float = Field(..., ge=0, description="Standard error of the variance, Gaussian approximation")
    exact_variance: float = Field(..., ge=0, description="Finite-delta variance in closed form")
    limit_variance: float = Field(..., ge=0, description="t/6 + (1 - e^{-2t})/4")
    method: IntegralMethod

    @staticmethod
    def csv_header() -> List[str]:
        return [
            "t", "delta", "samples", "replications", "variance", "std_error",
            "exact_variance", "limit_variance", "method",
        ]

    def csv_row(self) -> list:
        return [
            self.t, self.delta, self.samples, self.replications, self.variance,
            self.std_error, self.exact_variance, self.limit_variance, self.method.value,
        ]
