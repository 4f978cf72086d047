"""
JKO solver configuration and results.
"""

import math
from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from ..core.grid_core import step_index
from .grids import DensityGrid, FieldGrid, Grid1D, Interpolation, TimeGrid
from .transport import BandPolicy


class StepSchedule(str, Enum):
    """Inner step sizes tau_l = tau/log(1+l) or tau/l."""
    INV_LOG = "inv_log"
    INV_LINEAR = "inv_linear"


class InnerConfig(BaseModel):
    """Flux-descent settings for one proximal step."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    tau: float = Field(default=0.001, gt=0, description="Base inner step size")
    schedule: StepSchedule = Field(default=StepSchedule.INV_LOG, description="Inner step schedule")
    kappa: float = Field(default=1e-4, gt=0, description="Stop when ||alpha||_1 < kappa")
    l_max: int = Field(default=2000, ge=1, description="Inner iteration cap")
    nesterov: bool = Field(default=False, description="Momentum extrapolation of the candidate")
    gs_tol: float = Field(default=1e-12, gt=0, description="Gauss-Seidel successive-change tolerance")
    gs_max_sweeps: int = Field(default=50, ge=1, description="Gauss-Seidel sweep cap")
    strict_inner: bool = Field(default=False, description="Raise InnerStall instead of warning")

    def step_size(self, l: int) -> float:
        """tau_l for l >= 1."""
        if self.schedule == StepSchedule.INV_LOG:
            return self.tau / math.log(1.0 + l)
        return self.tau / l


class JkoConfig(BaseModel):
    """Outer JKO iteration settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: float = Field(..., gt=0, description="JKO time step")
    beta: float = Field(default=1.0, gt=0, description="Inverse temperature; inf drops diffusion")
    grid: Grid1D
    inner: InnerConfig = Field(default_factory=InnerConfig)
    band: BandPolicy = Field(default_factory=BandPolicy)
    interpolation: Interpolation = Field(default=Interpolation.CEIL)
    fe_tol: Optional[float] = Field(default=None, gt=0, description="Free-energy tolerance, settings.fe_tol if unset")

    @property
    def inverse_temperature(self) -> float:
        """1/beta, zero for beta = inf."""
        return 0.0 if math.isinf(self.beta) else 1.0 / self.beta


class StepDiagnostics(BaseModel):
    """What happened in one outer step."""

    model_config = ConfigDict(frozen=True)

    step: int = Field(..., ge=1)
    inner_iterations: int = Field(..., ge=0)
    alpha_l1: float
    w2_to_previous: float = Field(..., ge=0)
    free_energy: float
    free_energy_previous: float
    band_used: int = Field(default=0, ge=0)
    fallbacks: int = Field(default=0, ge=0, description="Inner steps that used the pullback fallback")
    stalled: bool = False

    @property
    def free_energy_drop(self) -> float:
        return self.free_energy_previous - self.free_energy


class JkoTrajectory(BaseModel):
    """Iterates rho^(0..N) of one outer JKO run."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    iterates: List[DensityGrid]
    diagnostics: List[StepDiagnostics] = Field(default_factory=list)
    delta: float = Field(..., gt=0)
    interpolation: Interpolation = Interpolation.CEIL

    @model_validator(mode="after")
    def validate_lengths(self):
        if not self.iterates:
            raise ValueError("trajectory needs at least the initial density")
        if len(self.diagnostics) != len(self.iterates) - 1:
            raise ValueError("one diagnostics record per outer step is required")
        grids = {it.grid for it in self.iterates}
        if len(grids) != 1:
            raise ValueError("all iterates must share one grid")
        return self

    @property
    def grid(self) -> Grid1D:
        return self.iterates[0].grid

    @property
    def steps(self) -> int:
        return len(self.iterates) - 1

    @property
    def final(self) -> DensityGrid:
        return self.iterates[-1]

    def density_at(self, t: float, convention: Optional[Interpolation] = None) -> DensityGrid:
        """rho_delta(t) = rho^(ceil(t/delta)) (or floor), clipped to the computed steps."""
        k = step_index(t, self.delta, convention or self.interpolation)
        return self.iterates[min(max(k, 0), self.steps)]

    def to_field(self, time_grid: TimeGrid, convention: Optional[Interpolation] = None) -> FieldGrid:
        rows = np.array([self.density_at(t, convention).values for t in time_grid.nodes])
        return FieldGrid(grid=self.grid, time_grid=time_grid, values=rows)

    def w2_sum(self) -> float:
        return float(sum(d.w2_to_previous for d in self.diagnostics))


class StepResult(BaseModel):
    """Output of one proximal step."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    density: DensityGrid
    inner_iterations: int
    alpha_l1: float
    band_used: int
    fallbacks: int = 0
    stalled: bool = False

    @field_validator("alpha_l1")
    @classmethod
    def validate_alpha(cls, v):
        if not np.isfinite(v):
            raise ValueError("alpha norm must be finite")
        return v
