"""
Transport models: banded couplings between two grid densities.
"""

from enum import Enum
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .grids import DensityGrid, Grid1D


class CouplingSolver(str, Enum):
    """How a banded coupling is computed."""
    MONOTONE = "monotone"
    FLOW = "flow"


class QuantileMethod(str, Enum):
    """Discretization used by the quantile W2 computation."""
    LINEAR = "linear"
    ATOMIC = "atomic"


class BandPolicy(BaseModel):
    """Coupling band and its widening policy."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    width: int = Field(default=1, ge=0, description="Initial band w")
    solver: CouplingSolver = Field(default=CouplingSolver.MONOTONE, description="Coupling solver")
    auto_widen: bool = Field(default=True, description="Double w on infeasibility, up to J")


class Coupling(BaseModel):
    """
    Banded coupling p_ij between rho_o (rows) and rho_s (columns).

    entries[i, k] stores p_{i, i+k-w}; positions with i+k-w outside 0..J are
    zero. Row sums approximate rho_o[i]/h and column sums rho_s[j]/h.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid1D
    band: int = Field(..., ge=0)
    entries: np.ndarray
    rho_o: DensityGrid
    rho_s: DensityGrid

    @field_validator("entries", mode="before")
    @classmethod
    def validate_entries(cls, v):
        arr = np.array(v, dtype=float, copy=True)
        if arr.ndim != 2:
            raise ValueError("coupling entries must be a 2D band array")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("coupling entries must be finite and nonnegative")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def validate_shape(self):
        if self.entries.shape != (self.grid.size, 2 * self.band + 1):
            raise ValueError(
                f"band array shape {self.entries.shape} does not match J+1={self.grid.size}, w={self.band}"
            )
        return self

    def dense(self) -> np.ndarray:
        """(J+1) x (J+1) matrix of p_ij."""
        n, w = self.grid.size, self.band
        out = np.zeros((n, n))
        rows, offsets = np.nonzero(self.entries)
        cols = rows + offsets - w
        out[rows, cols] = self.entries[rows, offsets]
        return out

    def row_sums(self) -> np.ndarray:
        return self.entries.sum(axis=1)

    def column_sums(self) -> np.ndarray:
        return self.dense().sum(axis=0)

    def marginal_error(self) -> float:
        h = self.grid.h
        rows = np.max(np.abs(self.row_sums() - self.rho_o.values / h))
        cols = np.max(np.abs(self.column_sums() - self.rho_s.values / h))
        return float(max(rows, cols))

    def cost(self) -> float:
        """h^4 sum (i-j)^2 p_ij, the squared transport cost of the atoms."""
        offsets = np.arange(-self.band, self.band + 1, dtype=float)
        return float(self.grid.h ** 4 * np.sum(self.entries * offsets[None, :] ** 2))

    def to_csv_rows(self) -> List[Tuple[int, int, float]]:
        rows, offsets = np.nonzero(self.entries)
        return [
            (int(i), int(i + k - self.band), float(self.entries[i, k]))
            for i, k in zip(rows, offsets)
        ]
