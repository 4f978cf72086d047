"""
Observation and estimation models.

Sample paths and batch sets produced by the Langevin sampler, and the
parameter estimates and estimator trajectories produced from them.
"""

from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class SchemeTag(str, Enum):
    """Estimation schemes."""
    OFFLINE = "offline"
    ONLINE_CUMULATIVE = "online_cumulative"
    PER_BATCH = "per_batch"
    AVERAGED_PSI = "averaged_psi"
    SEQUENTIAL = "sequential"


class InitialKind(str, Enum):
    POINT = "point"
    GAUSSIAN = "gaussian"
    STATIONARY = "stationary"


class InitialLaw(BaseModel):
    """
    Law of X(0).

    `stationary` draws from the Gibbs law of the sampled potential; for the
    quadratic family this makes the estimating equation exactly unbiased at
    every batch size.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: InitialKind = Field(default=InitialKind.STATIONARY, description="Initial law family")
    mean: List[float] = Field(default_factory=lambda: [0.0], description="Point or Gaussian mean")
    covariance: Optional[List[List[float]]] = Field(default=None, description="Gaussian covariance")

    @model_validator(mode="after")
    def validate_covariance(self):
        if self.kind == InitialKind.GAUSSIAN and self.covariance is None:
            raise ValueError("gaussian initial law needs a covariance")
        return self

    @classmethod
    def point(cls, value) -> "InitialLaw":
        return cls(kind=InitialKind.POINT, mean=list(np.atleast_1d(value).astype(float)))

    @classmethod
    def gaussian(cls, mean, covariance) -> "InitialLaw":
        return cls(
            kind=InitialKind.GAUSSIAN,
            mean=list(np.atleast_1d(mean).astype(float)),
            covariance=np.atleast_2d(covariance).astype(float).tolist(),
        )

    @classmethod
    def stationary(cls) -> "InitialLaw":
        return cls(kind=InitialKind.STATIONARY)

    def mean_vector(self, dim: int) -> np.ndarray:
        m = np.asarray(self.mean, dtype=float)
        return np.broadcast_to(m, (dim,)).copy() if m.size == 1 else m

    def covariance_matrix(self, dim: int) -> np.ndarray:
        if self.covariance is None:
            return np.zeros((dim, dim))
        c = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        return c[0, 0] * np.eye(dim) if c.shape == (1, 1) and dim > 1 else c


class SamplePath(BaseModel):
    """Observations X(i*eta), i = 1..n, of one Langevin path."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    observations: np.ndarray = Field(..., description="n x d array of observations")
    spacing: float = Field(..., gt=0, description="Observation spacing eta")
    initial: InitialLaw = Field(default_factory=InitialLaw.stationary)
    seed: int = Field(..., ge=0, description="Seed the path was generated from")
    key: List[int] = Field(default_factory=list, description="Substream key within the seed")

    @field_validator("observations", mode="before")
    @classmethod
    def validate_observations(cls, v):
        arr = np.array(v, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise ValueError("observations must be a nonempty n x d array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("observations must be finite")
        arr.setflags(write=False)
        return arr

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n + 1)


class BatchSet(BaseModel):
    """k independent batches of m observations each, from disjoint substreams."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    batches: List[SamplePath]

    @model_validator(mode="after")
    def validate_batches(self):
        if not self.batches:
            raise ValueError("batch set is empty")
        sizes = {b.n for b in self.batches}
        if len(sizes) != 1:
            raise ValueError(f"batches must share the batch size, got {sorted(sizes)}")
        keys = [tuple(b.key) for b in self.batches]
        if len(set(keys)) != len(keys):
            raise ValueError("batches must come from distinct substreams")
        return self

    @property
    def k(self) -> int:
        return len(self.batches)

    @property
    def m(self) -> int:
        return self.batches[0].n

    def pooled(self, count: Optional[int] = None) -> np.ndarray:
        """Observations of the first `count` batches stacked in order."""
        chosen = self.batches[: (self.k if count is None else count)]
        return np.concatenate([b.observations for b in chosen], axis=0)


class ThetaEstimate(BaseModel):
    """An estimate theta_hat with optional asymptotic scale gamma_hat."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    theta_hat: np.ndarray
    n_used: int = Field(..., ge=1)
    gamma_hat: Optional[np.ndarray] = None
    scheme: SchemeTag = SchemeTag.OFFLINE
    iterations: int = Field(default=0, ge=0, description="Newton iterations used")
    residual_norm: float = Field(default=0.0, ge=0, description="Final estimating-equation residual")

    @field_validator("theta_hat", mode="before")
    @classmethod
    def validate_theta(cls, v):
        arr = np.atleast_1d(np.array(v, dtype=float, copy=True))
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def validate_gamma(self):
        if self.gamma_hat is not None:
            g = np.atleast_2d(np.asarray(self.gamma_hat, dtype=float))
            if not np.allclose(g, g.T, atol=1e-10):
                raise ValueError("gamma_hat must be symmetric")
            if np.min(np.linalg.eigvalsh(0.5 * (g + g.T))) < -1e-10:
                raise ValueError("gamma_hat must be positive semidefinite")
        return self


class EstimatorTrajectory(BaseModel):
    """Estimates theta_hat^1, theta_hat^2, ... indexed by algorithm step k (1-based)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    estimates: np.ndarray = Field(..., description="K x q array, row k-1 holds theta_hat^k")
    scheme: SchemeTag

    @field_validator("estimates", mode="before")
    @classmethod
    def validate_estimates(cls, v):
        arr = np.array(v, dtype=float, copy=True)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError("estimates must be a K x q array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("estimates must be finite")
        arr.setflags(write=False)
        return arr

    def __len__(self) -> int:
        return self.estimates.shape[0]

    def theta_at(self, k: int) -> np.ndarray:
        """theta_hat^k for k >= 1."""
        if not 1 <= k <= len(self):
            raise IndexError(f"step {k} outside 1..{len(self)}")
        return self.estimates[k - 1]

    @classmethod
    def constant(cls, theta, length: int, scheme: SchemeTag = SchemeTag.ONLINE_CUMULATIVE) -> "EstimatorTrajectory":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return cls(estimates=np.tile(theta, (length, 1)), scheme=scheme)
