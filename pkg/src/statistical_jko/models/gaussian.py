"""
Gaussian states of the Bures-Wasserstein flow and its linearized limit.
"""

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


def _readonly(v, ndim: int) -> np.ndarray:
    arr = np.array(v, dtype=float, copy=True)
    if ndim == 1:
        arr = np.atleast_1d(arr)
    else:
        arr = np.atleast_2d(arr)
    if arr.ndim != ndim or not np.all(np.isfinite(arr)):
        raise ValueError(f"expected a finite {ndim}-dimensional array")
    arr.setflags(write=False)
    return arr


class GaussianState(BaseModel):
    """N(mean, cov) with cov symmetric positive definite."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    mean: np.ndarray
    cov: np.ndarray

    @field_validator("mean", mode="before")
    @classmethod
    def validate_mean(cls, v):
        return _readonly(v, 1)

    @field_validator("cov", mode="before")
    @classmethod
    def validate_cov(cls, v):
        return _readonly(v, 2)

    @model_validator(mode="after")
    def validate_state(self):
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ValueError(f"covariance must be {d}x{d}, got {self.cov.shape}")
        if not np.allclose(self.cov, self.cov.T, rtol=0.0, atol=1e-12):
            raise ValueError("covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(self.cov)) <= 0:
            raise ValueError("covariance must be positive definite")
        return self

    @property
    def dim(self) -> int:
        return self.mean.size

    @classmethod
    def isotropic(cls, mean, variance: float, dim: int = 1) -> "GaussianState":
        m = np.broadcast_to(np.atleast_1d(np.asarray(mean, dtype=float)), (dim,))
        return cls(mean=m, cov=variance * np.eye(dim))

    def csv_row(self) -> List[float]:
        return list(self.mean) + list(self.cov.ravel())


class BwLimitState(BaseModel):
    """Linearized perturbation (V_mu, V_Sigma) of a Gaussian state."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    v_mean: np.ndarray
    v_cov: np.ndarray

    @field_validator("v_mean", mode="before")
    @classmethod
    def validate_v_mean(cls, v):
        return _readonly(v, 1)

    @field_validator("v_cov", mode="before")
    @classmethod
    def validate_v_cov(cls, v):
        return _readonly(v, 2)

    @model_validator(mode="after")
    def validate_symmetry(self):
        d = self.v_mean.size
        if self.v_cov.shape != (d, d):
            raise ValueError(f"V_Sigma must be {d}x{d}")
        if not np.allclose(self.v_cov, self.v_cov.T, rtol=0.0, atol=1e-10):
            raise ValueError("V_Sigma must be symmetric")
        return self

    @classmethod
    def zero(cls, dim: int) -> "BwLimitState":
        return cls(v_mean=np.zeros(dim), v_cov=np.zeros((dim, dim)))

    def csv_row(self) -> List[float]:
        return list(self.v_mean) + list(self.v_cov.ravel())


class GaussianTrajectory(BaseModel):
    """States on a uniform time grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: List[float]
    states: List[GaussianState]

    @model_validator(mode="after")
    def validate_lengths(self):
        if len(self.times) != len(self.states) or not self.states:
            raise ValueError("one state per time node is required")
        return self

    @property
    def final(self) -> GaussianState:
        return self.states[-1]

    def csv_header(self) -> List[str]:
        d = self.states[0].dim
        return ["t"] + [f"mu_{i + 1}" for i in range(d)] + [
            f"sigma_{i + 1}{j + 1}" for i in range(d) for j in range(d)
        ]

    def csv_rows(self) -> List[List[float]]:
        return [[t] + s.csv_row() for t, s in zip(self.times, self.states)]


class BwLimitTrajectory(BaseModel):
    """Limit states on a uniform time grid."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    times: List[float]
    states: List[BwLimitState] = Field(default_factory=list)

    @property
    def final(self) -> BwLimitState:
        return self.states[-1]

    def csv_header(self) -> List[str]:
        d = self.states[0].v_mean.size
        return ["t"] + [f"v_mu_{i + 1}" for i in range(d)] + [
            f"v_sigma_{i + 1}{j + 1}" for i in range(d) for j in range(d)
        ]

    def csv_rows(self) -> List[List[float]]:
        return [[t] + s.csv_row() for t, s in zip(self.times, self.states)]
