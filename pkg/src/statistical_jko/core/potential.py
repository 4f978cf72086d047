"""
Parametric potentials Psi_theta(x), drifts built from them, and the CLT
direction field tau(x) = grad_theta Psi_theta(x)' gamma_theta.

Shape conventions: points x have shape (..., d), parameters theta have shape
(q,). psi returns (...,), grad_x (..., d), grad_theta_grad_x (..., d, q) with
entry [i, j] = d/dtheta_j d/dx_i Psi, and grad_theta_psi (..., q).
"""

import logging
import math
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from ..models.estimates import EstimatorTrajectory, SchemeTag
from ..models.grids import DensityGrid, Grid1D
from .exceptions import AllMassLost, ConfigError, TrajectoryTooShort
from .grid_core import renormalize

logger = logging.getLogger(__name__)


def _offsets(theta, x, d: int):
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}, got shape {x.shape}")
    return x - theta


class ParametricPotential(ABC):
    """A family Psi_theta(x) >= 0 with analytic derivatives in x and theta."""

    name: str = "abstract"

    def __init__(self, dim_x: int, dim_theta: int):
        self.dim_x = dim_x
        self.dim_theta = dim_theta

    @abstractmethod
    def psi(self, theta, x) -> np.ndarray:
        """Potential values."""

    @abstractmethod
    def grad_x(self, theta, x) -> np.ndarray:
        """Gradient in x."""

    @abstractmethod
    def grad_theta_grad_x(self, theta, x) -> np.ndarray:
        """Mixed second derivative, d x q per point."""

    @abstractmethod
    def grad_theta_psi(self, theta, x) -> np.ndarray:
        """Gradient in theta."""

    @property
    def precision(self) -> Optional[np.ndarray]:
        """The matrix A of a quadratic family, None for non-quadratic ones."""
        return None

    @property
    def is_quadratic(self) -> bool:
        return self.precision is not None

    def default_theta_init(self, observations: np.ndarray) -> np.ndarray:
        """Method-of-moments guess for quadratics, zero otherwise."""
        if self.is_quadratic:
            return np.mean(np.asarray(observations, dtype=float), axis=0)
        return np.zeros(self.dim_theta)

    def describe(self) -> Dict[str, Any]:
        return {"id": self.name, "dim_x": self.dim_x, "dim_theta": self.dim_theta}


class QuadraticMatrixPotential(ParametricPotential):
    """Psi_theta(x) = 1/2 (x - theta)' A (x - theta) with A symmetric positive definite."""

    name = "quadratic_matrix"

    def __init__(self, matrix):
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        if A.shape[0] != A.shape[1]:
            raise ConfigError("quadratic_matrix needs a square matrix", shape=str(A.shape))
        if not np.allclose(A, A.T, atol=1e-12):
            raise ConfigError("quadratic_matrix needs a symmetric matrix")
        if np.min(np.linalg.eigvalsh(A)) <= 0:
            raise ConfigError("quadratic_matrix needs a positive definite matrix")
        super().__init__(dim_x=A.shape[0], dim_theta=A.shape[0])
        self._A = A

    @property
    def precision(self) -> np.ndarray:
        return self._A

    def psi(self, theta, x):
        r = _offsets(theta, x, self.dim_x)
        return 0.5 * np.einsum("...i,ij,...j->...", r, self._A, r)

    def grad_x(self, theta, x):
        return _offsets(theta, x, self.dim_x) @ self._A

    def grad_theta_grad_x(self, theta, x):
        r = _offsets(theta, x, self.dim_x)
        return np.broadcast_to(-self._A, r.shape[:-1] + self._A.shape).copy()

    def grad_theta_psi(self, theta, x):
        return -(_offsets(theta, x, self.dim_x) @ self._A)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), "matrix": self._A.tolist()}


class QuadraticPotential(QuadraticMatrixPotential):
    """Psi_theta(x) = 1/2 |x - theta|^2, the Ornstein-Uhlenbeck family."""

    name = "quadratic"

    def __init__(self, dim: int = 1):
        super().__init__(np.eye(dim))

    def psi(self, theta, x):
        r = _offsets(theta, x, self.dim_x)
        return 0.5 * np.sum(r * r, axis=-1)

    def grad_x(self, theta, x):
        return _offsets(theta, x, self.dim_x)

    def grad_theta_psi(self, theta, x):
        return -_offsets(theta, x, self.dim_x)

    def describe(self) -> Dict[str, Any]:
        return {"id": self.name, "dim_x": self.dim_x, "dim_theta": self.dim_theta}


class QuarticPotential(ParametricPotential):
    """Psi_theta(x) = 1/4 |x - theta|^4 + 1/2 |x - theta|^2."""

    name = "quartic"

    def __init__(self, dim: int = 1):
        super().__init__(dim_x=dim, dim_theta=dim)

    def psi(self, theta, x):
        r = _offsets(theta, x, self.dim_x)
        s = np.sum(r * r, axis=-1)
        return 0.25 * s * s + 0.5 * s

    def grad_x(self, theta, x):
        r = _offsets(theta, x, self.dim_x)
        s = np.sum(r * r, axis=-1, keepdims=True)
        return (s + 1.0) * r

    def grad_theta_grad_x(self, theta, x):
        r = _offsets(theta, x, self.dim_x)
        s = np.sum(r * r, axis=-1)[..., None, None]
        eye = np.eye(self.dim_x)
        return -(s + 1.0) * eye - 2.0 * r[..., :, None] * r[..., None, :]

    def grad_theta_psi(self, theta, x):
        return -self.grad_x(theta, x)


POTENTIALS = {
    QuadraticPotential.name: QuadraticPotential,
    QuadraticMatrixPotential.name: QuadraticMatrixPotential,
    QuarticPotential.name: QuarticPotential,
}


def build_potential(potential_id: str, params: Optional[Dict[str, Any]] = None) -> ParametricPotential:
    """
    Build a potential from its config id and parameter block.

    Args:
        potential_id: "quadratic", "quadratic_matrix" or "quartic"
        params: {"dim": int} for quadratic/quartic, {"matrix": [[...]]} for quadratic_matrix

    Returns:
        The potential instance

    Raises:
        ConfigError: Unknown id or bad parameters
    """
    params = dict(params or {})
    if potential_id not in POTENTIALS:
        raise ConfigError(f"Unknown potential id: {potential_id}", known=", ".join(sorted(POTENTIALS)))
    try:
        if potential_id == QuadraticMatrixPotential.name:
            return QuadraticMatrixPotential(params["matrix"])
        return POTENTIALS[potential_id](dim=int(params.get("dim", 1)))
    except KeyError as e:
        raise ConfigError(f"Missing parameter {e} for potential {potential_id}") from e


class DriftPotential(ABC):
    """An x-only potential used as the drift of one JKO or Fokker-Planck step."""

    @abstractmethod
    def psi(self, x) -> np.ndarray:
        ...

    @abstractmethod
    def grad_x(self, x) -> np.ndarray:
        ...

    def psi_on(self, grid: Grid1D) -> np.ndarray:
        return self.psi(grid.nodes[:, None])

    def gradient_on(self, grid: Grid1D) -> np.ndarray:
        return self.grad_x(grid.nodes[:, None])[:, 0]


class FrozenPotential(DriftPotential):
    """Psi_theta with theta fixed."""

    def __init__(self, potential: ParametricPotential, theta):
        self.potential = potential
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))

    def psi(self, x):
        return self.potential.psi(self.theta, x)

    def grad_x(self, x):
        return self.potential.grad_x(self.theta, x)


class AveragedPotential(DriftPotential):
    """(1/k) sum_j Psi_{theta_j}, averaged values and averaged gradients."""

    def __init__(self, potential: ParametricPotential, thetas: Sequence):
        thetas = np.asarray(thetas, dtype=float)
        if thetas.ndim == 1:
            thetas = thetas[:, None]
        if thetas.shape[0] < 1:
            raise ValueError("averaged potential needs at least one parameter")
        self.potential = potential
        self.thetas = thetas

    def psi(self, x):
        return np.mean([self.potential.psi(t, x) for t in self.thetas], axis=0)

    def grad_x(self, x):
        return np.mean([self.potential.grad_x(t, x) for t in self.thetas], axis=0)


def estimated_drift(
    potential: ParametricPotential,
    trajectory: EstimatorTrajectory,
    scheme: SchemeTag,
    k: int,
) -> DriftPotential:
    """
    Drift of outer step k (1-based) for an online scheme.

    The averaged scheme averages the first k per-batch estimates; every other
    scheme freezes theta_hat^k.

    Raises:
        TrajectoryTooShort: If the trajectory has fewer than k estimates
    """
    if k > len(trajectory):
        raise TrajectoryTooShort(
            f"step {k} needs {k} estimates, trajectory has {len(trajectory)}",
            needed=k, available=len(trajectory),
        )
    k = max(k, 1)
    if scheme == SchemeTag.AVERAGED_PSI:
        return AveragedPotential(potential, trajectory.estimates[:k])
    return FrozenPotential(potential, trajectory.theta_at(k))


def gibbs_density(potential: ParametricPotential, theta, beta: float, grid: Grid1D) -> DensityGrid:
    """
    Grid-sampled Gibbs density exp(-beta Psi_theta)/Z, renormalized on the grid.

    Raises:
        AllMassLost: If exp(-beta Psi) vanishes or overflows at every interior node
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    psi = potential.psi(theta, grid.nodes[:, None])
    finite = np.isfinite(psi)
    finite[0] = finite[-1] = False
    if not np.any(finite):
        raise AllMassLost("potential is not finite anywhere on the grid", beta=beta)
    shift = np.min(psi[finite])
    weights = np.zeros_like(psi)
    weights[finite] = np.exp(-beta * (psi[finite] - shift))
    return renormalize(DensityGrid.from_values(grid, weights))


def symmetric_psd_sqrt(matrix) -> np.ndarray:
    """Symmetric PSD square root; negative eigenvalues are clamped to zero."""
    M = np.atleast_2d(np.asarray(matrix, dtype=float))
    M = 0.5 * (M + M.T)
    eigenvalues, vectors = np.linalg.eigh(M)
    root = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (vectors * root) @ vectors.T


def ou_gamma(eta: float, beta: float = 1.0, dim: int = 1) -> np.ndarray:
    """
    CLT scale of the estimating-equation estimator for the isotropic OU family
    observed at spacing eta: gamma^2 = (1 + e^-eta) / (beta (1 - e^-eta)).
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    gamma_sq = (1.0 + math.exp(-eta)) / (beta * -math.expm1(-eta))
    return math.sqrt(gamma_sq) * np.eye(dim)


class TauField(BaseModel):
    """tau(x) = grad_theta Psi_theta(x)' gamma with gamma the symmetric root of Gamma_theta."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    potential: ParametricPotential
    theta: np.ndarray
    gamma: np.ndarray

    @model_validator(mode="after")
    def validate_gamma(self):
        q = self.potential.dim_theta
        if self.gamma.shape != (q, q):
            raise ValueError(f"gamma must be {q}x{q}, got {self.gamma.shape}")
        if not np.allclose(self.gamma, self.gamma.T, atol=1e-12):
            raise ValueError("gamma must be symmetric")
        return self

    @classmethod
    def from_gamma(cls, potential: ParametricPotential, theta, gamma) -> "TauField":
        return cls(
            potential=potential,
            theta=np.atleast_1d(np.asarray(theta, dtype=float)),
            gamma=np.atleast_2d(np.asarray(gamma, dtype=float)),
        )

    @classmethod
    def from_gamma_squared(cls, potential: ParametricPotential, theta, gamma_squared) -> "TauField":
        return cls.from_gamma(potential, theta, symmetric_psd_sqrt(gamma_squared))

    @classmethod
    def identity(cls, potential: ParametricPotential, theta) -> "TauField":
        return cls.from_gamma(potential, theta, np.eye(potential.dim_theta))

    def tau(self, x) -> np.ndarray:
        return self.potential.grad_theta_psi(self.theta, x) @ self.gamma

    def grad_tau(self, x) -> np.ndarray:
        return self.potential.grad_theta_grad_x(self.theta, x) @ self.gamma

    def forcing_direction_on(self, grid: Grid1D, increment) -> np.ndarray:
        """grad tau(x_j) @ s at every node of a 1D grid, for a q-vector s."""
        s = np.atleast_1d(np.asarray(increment, dtype=float))
        return (self.grad_tau(grid.nodes[:, None]) @ s)[:, 0]
