"""
Grid value objects.

Uniform spatial and temporal grids, grid-sampled densities and space-time
fields. All objects are frozen after construction and their arrays are
read-only, so they can be shared between threads.
"""

from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class Interpolation(str, Enum):
    """How a continuous time t maps to a JKO step index."""
    CEIL = "ceil"
    FLOOR = "floor"


def _frozen_array(values, ndim: int) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("values must be finite")
    arr.setflags(write=False)
    return arr


class Grid1D(BaseModel):
    """Uniform grid on [-D, D] with J intervals; node i sits at x_i = i*h - D."""

    model_config = ConfigDict(frozen=True)

    half_width: float = Field(..., gt=0, description="Half width D of the domain [-D, D]")
    intervals: int = Field(..., ge=4, description="Number of intervals J")

    @property
    def h(self) -> float:
        return 2.0 * self.half_width / self.intervals

    @property
    def size(self) -> int:
        return self.intervals + 1

    @property
    def nodes(self) -> np.ndarray:
        # (2i - J) * (D / J) keeps x_{J-i} == -x_i exactly
        J = self.intervals
        return (2.0 * np.arange(J + 1) - J) * (self.half_width / J)

    def refined(self, factor: int = 2) -> "Grid1D":
        return Grid1D(half_width=self.half_width, intervals=self.intervals * factor)


class TimeGrid(BaseModel):
    """Uniform grid on [0, T] with I steps of size nu = T/I."""

    model_config = ConfigDict(frozen=True)

    horizon: float = Field(..., gt=0, description="Horizon T")
    steps: int = Field(..., ge=1, description="Number of steps I")

    @property
    def nu(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.nu

    def refined(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(horizon=self.horizon, steps=self.steps * factor)


class DensityGrid(BaseModel):
    """
    A probability density sampled on a Grid1D.

    Construction enforces shape, finiteness, nonnegativity and the boundary
    zeros. Unit mass is checked separately (`check_mass`) so that unnormalized
    intermediate states can still be represented and renormalized.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid1D
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v):
        arr = _frozen_array(v, ndim=1)
        if np.any(arr < 0):
            raise ValueError("density values must be nonnegative")
        return arr

    @model_validator(mode="after")
    def validate_shape(self):
        if self.values.shape != (self.grid.size,):
            raise ValueError(
                f"density has {self.values.shape[0]} values, grid has {self.grid.size} nodes"
            )
        if self.values[0] != 0.0 or self.values[-1] != 0.0:
            raise ValueError("density must vanish at both boundary nodes")
        return self

    def mass(self) -> float:
        """Trapezoidal mass; boundary values are zero so this is h * sum."""
        return float(self.grid.h * np.sum(self.values))

    def check_mass(self, tol: float) -> bool:
        return abs(self.mass() - 1.0) <= tol

    @classmethod
    def from_values(cls, grid: Grid1D, values) -> "DensityGrid":
        """Build a density, clamping tiny negatives and zeroing the boundary."""
        arr = np.array(values, dtype=float, copy=True)
        arr[arr < 0] = 0.0
        arr[0] = 0.0
        arr[-1] = 0.0
        return cls(grid=grid, values=arr)


class FieldGrid(BaseModel):
    """
    A signed space-time field V(t_i, x_j) on TimeGrid x Grid1D.

    Rows are time nodes, columns are space nodes. Dirichlet boundary columns
    are zero. The zero initial row required for limit fields is checked by
    `has_zero_initial` since density paths share this container.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid1D
    time_grid: TimeGrid
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def validate_values(cls, v):
        return _frozen_array(v, ndim=2)

    @model_validator(mode="after")
    def validate_shape(self):
        expected = (self.time_grid.steps + 1, self.grid.size)
        if self.values.shape != expected:
            raise ValueError(f"field shape {self.values.shape} does not match grids {expected}")
        if np.any(self.values[:, 0] != 0.0) or np.any(self.values[:, -1] != 0.0):
            raise ValueError("field must vanish on the boundary columns")
        return self

    def has_zero_initial(self) -> bool:
        return bool(np.all(self.values[0] == 0.0))

    def row(self, i: int) -> np.ndarray:
        return self.values[i]

    def density_at(self, i: int) -> DensityGrid:
        return DensityGrid(grid=self.grid, values=self.values[i])
