"""
Parameter estimation from Langevin observations.

All schemes solve the estimating equation sum_i grad_x Psi_theta(X_i) = 0 by
damped Newton iteration. The asymptotic scale gamma_theta is estimated with a
Bartlett lag window over the autocovariances of f(X) = grad_x Psi_theta(X).
"""

import logging
import math
from typing import Callable, Dict, Optional

import numpy as np
from scipy import stats

from ..config.settings import get_settings
from ..core.exceptions import NoConvergence, SingularJacobian
from ..core.potential import AveragedPotential, ParametricPotential, QuadraticPotential, ou_gamma, symmetric_psd_sqrt
from ..models.estimates import (
    BatchSet, EstimatorTrajectory, InitialLaw, SamplePath, SchemeTag, ThetaEstimate,
)
from .langevin_sampler import sample_ou_path

logger = logging.getLogger(__name__)


def _as_observations(data) -> np.ndarray:
    if isinstance(data, SamplePath):
        return np.asarray(data.observations)
    arr = np.asarray(data, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def _solve_linear(jacobian: np.ndarray, residual: np.ndarray) -> np.ndarray:
    if jacobian.shape[0] == jacobian.shape[1]:
        try:
            if np.linalg.cond(jacobian) > 1e14:
                raise np.linalg.LinAlgError("ill-conditioned")
            return np.linalg.solve(jacobian, -residual)
        except np.linalg.LinAlgError as e:
            raise SingularJacobian(
                "Newton system is singular", condition=float(np.linalg.cond(jacobian))
            ) from e
    step, *_ = np.linalg.lstsq(jacobian, -residual, rcond=None)
    return step


def solve_estimating_equation(
    potential: ParametricPotential,
    observations: np.ndarray,
    theta_init: Optional[np.ndarray] = None,
    eq_tol: Optional[float] = None,
    max_iter: Optional[int] = None,
    max_halvings: Optional[int] = None,
):
    """
    Damped Newton iteration for sum_i grad_x Psi_theta(X_i) = 0.

    Returns:
        (theta_hat, iterations, residual_norm)

    Raises:
        SingularJacobian: Jacobian not invertible along the iteration
        NoConvergence: Residual above n * eq_tol after max_iter iterations
    """
    settings = get_settings()
    eq_tol = settings.newton_eq_tol if eq_tol is None else eq_tol
    max_iter = settings.newton_max_iter if max_iter is None else max_iter
    max_halvings = settings.newton_max_halvings if max_halvings is None else max_halvings

    n = observations.shape[0]
    theta = (
        potential.default_theta_init(observations)
        if theta_init is None
        else np.atleast_1d(np.asarray(theta_init, dtype=float)).copy()
    )

    def residual_of(t):
        return np.sum(potential.grad_x(t, observations), axis=0)

    residual = residual_of(theta)
    norm = float(np.linalg.norm(residual))
    target = n * eq_tol
    for iteration in range(max_iter + 1):
        if norm <= target:
            return theta, iteration, norm
        if iteration == max_iter:
            break
        jacobian = np.sum(potential.grad_theta_grad_x(theta, observations), axis=0)
        step = _solve_linear(jacobian, residual)
        scale = 1.0
        for _ in range(max_halvings + 1):
            candidate = theta + scale * step
            candidate_residual = residual_of(candidate)
            candidate_norm = float(np.linalg.norm(candidate_residual))
            if candidate_norm < norm or candidate_norm <= target:
                break
            scale *= 0.5
        else:
            logger.warning(f"Newton damping exhausted at iteration {iteration} (residual {norm:.3e})")
        theta, residual, norm = candidate, candidate_residual, candidate_norm

    raise NoConvergence(
        f"estimating equation residual {norm:.3e} above {target:.3e} after {max_iter} iterations",
        residual=norm, iterations=max_iter,
    )


def solve_offline(
    potential: ParametricPotential,
    path,
    theta_init: Optional[np.ndarray] = None,
    eq_tol: Optional[float] = None,
) -> ThetaEstimate:
    """
    Offline estimate from all observations of a path.

    Args:
        potential: Parametric family
        path: SamplePath or an n x d array of observations
        theta_init: Starting point; method of moments for quadratics by default
        eq_tol: Residual tolerance per observation

    Returns:
        ThetaEstimate with scheme OFFLINE
    """
    observations = _as_observations(path)
    if observations.shape[0] < 1:
        raise ValueError("path must contain at least one observation")
    theta, iterations, norm = solve_estimating_equation(potential, observations, theta_init, eq_tol)
    return ThetaEstimate(
        theta_hat=theta, n_used=observations.shape[0], scheme=SchemeTag.OFFLINE,
        iterations=iterations, residual_norm=norm,
    )


def estimate_gamma(
    potential: ParametricPotential,
    theta_hat,
    path,
    lag_cutoff: Optional[int] = None,
) -> np.ndarray:
    """
    Plug-in estimate of gamma_theta, the symmetric PSD root of A^-1 Sigma_f A'^-1.

    A is the sample mean of grad_theta grad_x Psi; Sigma_f is the Bartlett-tapered
    sum of autocovariances of f = grad_x Psi up to lag_cutoff (default floor(n^(1/3))).

    Raises:
        SingularJacobian: If A is not invertible
    """
    observations = _as_observations(path)
    n = observations.shape[0]
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    lag_cutoff = int(math.floor(n ** (1.0 / 3.0))) if lag_cutoff is None else int(lag_cutoff)
    lag_cutoff = max(0, min(lag_cutoff, n - 1))

    f = potential.grad_x(theta_hat, observations)
    centered = f - f.mean(axis=0)
    sigma_f = centered.T @ centered / n
    for k in range(1, lag_cutoff + 1):
        weight = 1.0 - k / (lag_cutoff + 1.0)
        gamma_k = centered[k:].T @ centered[:-k] / n
        sigma_f += weight * (gamma_k + gamma_k.T)

    A = np.mean(potential.grad_theta_grad_x(theta_hat, observations), axis=0)
    try:
        if np.linalg.cond(A) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        A_inv = np.linalg.inv(A)
    except np.linalg.LinAlgError as e:
        raise SingularJacobian("plug-in A matrix is singular") from e
    return symmetric_psd_sqrt(A_inv @ sigma_f @ A_inv.T)


def online_cumulative(potential: ParametricPotential, batches: BatchSet) -> EstimatorTrajectory:
    """theta_hat^k from the pooled first k batches, warm-started from theta_hat^(k-1)."""
    estimates = []
    theta = None
    for k in range(1, batches.k + 1):
        theta, _, _ = solve_estimating_equation(potential, batches.pooled(k), theta)
        estimates.append(theta)
    return EstimatorTrajectory(estimates=np.array(estimates), scheme=SchemeTag.ONLINE_CUMULATIVE)


def per_batch(potential: ParametricPotential, batches: BatchSet) -> EstimatorTrajectory:
    """theta_hat_m^(k) from batch k alone."""
    estimates = [
        solve_estimating_equation(potential, np.asarray(b.observations))[0] for b in batches.batches
    ]
    return EstimatorTrajectory(estimates=np.array(estimates), scheme=SchemeTag.PER_BATCH)


def averaged_psi(potential: ParametricPotential, batches: BatchSet, k: int) -> AveragedPotential:
    """(1/k) sum_{j<=k} Psi_{theta_hat_m^(j)} as a drift potential."""
    if not 1 <= k <= batches.k:
        raise ValueError(f"k must lie in 1..{batches.k}")
    trajectory = per_batch(potential, BatchSet(batches=batches.batches[:k]))
    return AveragedPotential(potential, trajectory.estimates)


def sequential(potential: ParametricPotential, path) -> EstimatorTrajectory:
    """theta_hat_k from the first k single observations, k = 1..n."""
    observations = _as_observations(path)
    estimates = []
    theta = None
    for k in range(1, observations.shape[0] + 1):
        theta, _, _ = solve_estimating_equation(potential, observations[:k], theta)
        estimates.append(theta)
    return EstimatorTrajectory(estimates=np.array(estimates), scheme=SchemeTag.SEQUENTIAL)


SCHEMES: Dict[SchemeTag, Callable[[ParametricPotential, BatchSet], EstimatorTrajectory]] = {
    SchemeTag.ONLINE_CUMULATIVE: online_cumulative,
    SchemeTag.PER_BATCH: per_batch,
    SchemeTag.AVERAGED_PSI: per_batch,
    SchemeTag.SEQUENTIAL: lambda potential, batches: sequential(potential, batches.pooled()),
}


def online_trajectory(scheme: SchemeTag, potential: ParametricPotential, batches: BatchSet) -> EstimatorTrajectory:
    """
    Dispatch an online scheme.

    The averaged scheme returns the per-batch estimates tagged AVERAGED_PSI; the
    drift at step k averages the first k of them. The sequential scheme runs
    over the pooled observations, one estimate per observation.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"{scheme.value} is not an online scheme")
    trajectory = SCHEMES[scheme](potential, batches)
    return EstimatorTrajectory(estimates=trajectory.estimates, scheme=scheme)


def clt_offline_study(
    theta: float,
    eta: float,
    n: int,
    replications: int,
    seed: int,
    beta: float = 1.0,
) -> Dict[str, object]:
    """
    Standardized offline estimates sqrt(n)(theta_hat - theta)/gamma_theta over
    independent stationary OU paths, with a KS test against N(0, 1).
    """
    gamma = float(ou_gamma(eta, beta)[0, 0])
    potential = QuadraticPotential()
    standardized = np.empty(replications)
    initial = InitialLaw.stationary()
    for r in range(replications):
        path = sample_ou_path([theta], beta, eta, n, initial, seed, key=(0, r))
        theta_hat = float(solve_offline(potential, path).theta_hat[0])
        standardized[r] = math.sqrt(n) * (theta_hat - theta) / gamma
    ks = stats.kstest(standardized, "norm")
    return {
        "standardized": standardized,
        "gamma": gamma,
        "ks_statistic": float(ks.statistic),
        "p_value": float(ks.pvalue),
    }


def running_mean_increment(trajectory: EstimatorTrajectory, batches: BatchSet, k: int) -> np.ndarray:
    """
    theta_hat^{k+1} - theta_hat^k predicted by the running-mean recursion.

    For a quadratic family with equal batch sizes the cumulative estimate is
    the pooled sample mean, so the increment is (mean of batch k+1 - theta_hat^k)/(k+1).
    Comparing against the trajectory's actual increment checks the Newton solver.
    """
    if not 1 <= k < min(len(trajectory), batches.k):
        raise ValueError(f"k must lie in 1..{min(len(trajectory), batches.k) - 1}")
    batch_mean = np.mean(np.asarray(batches.batches[k].observations), axis=0)
    return (batch_mean - trajectory.theta_at(k)) / (k + 1)
