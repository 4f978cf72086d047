"""
Noise paths and forcing specifications for the limiting fields.
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.potential import TauField
from .grids import FieldGrid, TimeGrid


class NoiseKind(str, Enum):
    BROWNIAN = "brownian"
    WHITE_INCREMENTS = "white_increments"
    FIXED_GAUSSIAN = "fixed_gaussian"
    ESTIMATOR_COUPLED = "estimator_coupled"


class ScalingRule(str, Enum):
    """
    How the noise enters the forcing on step i -> i+1.

    constant:      s = Z
    inverse_time:  s = W(t_{i+1}) / t_{i+1}
    white:         s = (W(t_{i+1}) - W(t_i)) / nu
    coupled:       s = values[i+1] / nu, values holding (m delta)^{1/2}(theta_hat^{i+1} - theta)
    """
    CONSTANT = "constant"
    INVERSE_TIME = "inverse_time"
    WHITE = "white"
    COUPLED = "coupled"


class NoisePath(BaseModel):
    """A q-dimensional noise sampled at every node of a time grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    time_grid: TimeGrid
    values: np.ndarray = Field(..., description="(I+1) x q array, row i at t_i")
    kind: NoiseKind
    seed: Optional[int] = Field(default=None, ge=0)
    key: List[int] = Field(default_factory=list)

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v):
        arr = np.array(v, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise ValueError("noise values must be a finite (I+1) x q array")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def validate_path(self):
        if self.values.shape[0] != self.time_grid.steps + 1:
            raise ValueError(
                f"noise has {self.values.shape[0]} rows, time grid has {self.time_grid.steps + 1} nodes"
            )
        if self.kind in (NoiseKind.BROWNIAN, NoiseKind.WHITE_INCREMENTS) and np.any(self.values[0] != 0.0):
            raise ValueError("Brownian paths start at zero")
        if self.kind == NoiseKind.FIXED_GAUSSIAN and np.any(self.values != self.values[0]):
            raise ValueError("fixed Gaussian noise is constant in time")
        return self

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def scaled(self, factor: float) -> "NoisePath":
        return self.model_copy(update={"values": _readonly(factor * self.values)})

    def forcing_scale(self, rule: ScalingRule, i: int) -> np.ndarray:
        """The q-vector s used on step i -> i+1."""
        nu = self.time_grid.nu
        if rule == ScalingRule.CONSTANT:
            return self.values[i + 1]
        if rule == ScalingRule.INVERSE_TIME:
            return self.values[i + 1] / ((i + 1) * nu)
        if rule == ScalingRule.WHITE:
            return (self.values[i + 1] - self.values[i]) / nu
        return self.values[i + 1] / nu


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


class ForcingSpec(BaseModel):
    """
    Forcing div(rho grad tau . s(t)) of a limiting field.

    `density` supplies rho(t_i, .) on the simulation grids; the field is
    simulated on density.grid x density.time_grid.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    density: FieldGrid
    tau: TauField = Field(..., description="Direction field giving grad tau on the grid")
    noise: NoisePath
    rule: ScalingRule

    @model_validator(mode="after")
    def validate_consistency(self):
        if self.noise.time_grid != self.density.time_grid:
            raise ValueError("noise and density must share the time grid")
        q = self.tau.potential.dim_theta
        if q != self.noise.dim:
            raise ValueError(f"noise dimension {self.noise.dim} does not match tau dimension {q}")
        return self
