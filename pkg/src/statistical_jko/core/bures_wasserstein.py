"""
The JKO flow restricted to Gaussian measures.

On N(mu, Sigma) the Wasserstein gradient flow of the free energy reduces to

    mu'    = -E grad Psi(X)
    Sigma' = 2/beta I - E[grad Psi(X)(X - mu)' + (X - mu) grad Psi(X)']

Expectations are closed-form for quadratic potentials and tensorized
Gauss-Hermite quadrature otherwise. The discrete BW-JKO step solves the
first-order conditions of the Gaussian-restricted proximal problem by fixed
point: the optimal map from the new state to the old one is affine with
matrix S = I + delta (H - Sigma^-1/beta), H = E grad^2 Psi, so
mu = mu_0 - delta E grad Psi and Sigma = S^-1 Sigma_0 S^-1.
"""

import logging
import math
from functools import lru_cache
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from ..config.settings import get_settings
from ..models.estimates import EstimatorTrajectory
from ..models.fields import NoiseKind, NoisePath
from ..models.gaussian import BwLimitState, BwLimitTrajectory, GaussianState, GaussianTrajectory
from ..models.grids import Interpolation
from .exceptions import (
    ConfigError,
    DimensionTooLarge,
    FixedPointDiverged,
    LostPositiveDefiniteness,
    TrajectoryTooShort,
)
from .grid_core import step_index
from .potential import ParametricPotential, TauField

logger = logging.getLogger(__name__)

Moments = Tuple[np.ndarray, np.ndarray]


class Expectations(NamedTuple):
    """E grad Psi and E[grad Psi(X)(X - mu)'] under a Gaussian state."""

    mean_grad: np.ndarray
    grad_cross: np.ndarray

    @property
    def cross_grad(self) -> np.ndarray:
        return self.grad_cross.T


@lru_cache(maxsize=32)
def _standard_rule(dim: int, order: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = hermegauss(order)
    weights = weights / math.sqrt(2.0 * math.pi)
    grids = np.meshgrid(*([nodes] * dim), indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    w = np.ones(points.shape[0])
    for wg in np.meshgrid(*([weights] * dim), indexing="ij"):
        w = w * wg.ravel()
    return points, w


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as e:
        raise LostPositiveDefiniteness(
            "covariance is not positive definite", min_eigenvalue=float(np.min(np.linalg.eigvalsh(cov)))
        ) from e


def quadrature_points(mean: np.ndarray, cov: np.ndarray, order: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gauss-Hermite points and weights for N(mean, cov).

    Raises:
        DimensionTooLarge: Above settings.max_quadrature_dim
        LostPositiveDefiniteness: If cov is not positive definite
    """
    settings = get_settings()
    order = settings.quadrature_order if order is None else order
    d = mean.size
    if d > settings.max_quadrature_dim:
        raise DimensionTooLarge(
            f"tensor quadrature in d={d} exceeds the limit {settings.max_quadrature_dim}", dim=d
        )
    points, weights = _standard_rule(d, order)
    return mean + points @ _cholesky(cov).T, weights


def _expect(potential: ParametricPotential, theta: np.ndarray, mean: np.ndarray, cov: np.ndarray, order) -> Expectations:
    if potential.is_quadratic:
        _cholesky(cov)
        A = potential.precision
        return Expectations(mean_grad=A @ (mean - theta), grad_cross=A @ cov)
    x, w = quadrature_points(mean, cov, order)
    g = potential.grad_x(theta, x)
    return Expectations(mean_grad=w @ g, grad_cross=(g * w[:, None]).T @ (x - mean))


def gaussian_expectations(
    potential: ParametricPotential,
    theta,
    state: GaussianState,
    order: Optional[int] = None,
) -> Expectations:
    """
    E grad Psi(X), E[grad Psi(X)(X - mu)'] and its transpose for X ~ state.

    Raises:
        DimensionTooLarge: For quadrature in more than max_quadrature_dim dimensions
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    return _expect(potential, theta, state.mean, state.cov, order)


def _symmetric(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _inverse_temperature(beta: float) -> float:
    return 0.0 if math.isinf(beta) else 1.0 / beta


def _flow_rhs(potential, theta, mean, cov, inv_beta, order) -> Moments:
    e = _expect(potential, theta, mean, cov, order)
    d = mean.size
    return -e.mean_grad, 2.0 * inv_beta * np.eye(d) - (e.grad_cross + e.grad_cross.T)


def _check_pd(cov: np.ndarray, t: float) -> None:
    if np.min(np.linalg.eigvalsh(cov)) <= 0:
        raise LostPositiveDefiniteness(f"covariance lost positive definiteness at t={t:.6g}", t=t)


def _rk4_step(rhs: Callable[[float, np.ndarray, np.ndarray], Moments], t: float, mean, cov, dt: float) -> Moments:
    k1m, k1c = rhs(t, mean, cov)
    k2m, k2c = rhs(t + dt / 2, mean + dt / 2 * k1m, _symmetric(cov + dt / 2 * k1c))
    k3m, k3c = rhs(t + dt / 2, mean + dt / 2 * k2m, _symmetric(cov + dt / 2 * k2c))
    k4m, k4c = rhs(t + dt, mean + dt * k3m, _symmetric(cov + dt * k3c))
    mean = mean + dt / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
    cov = _symmetric(cov + dt / 6 * (k1c + 2 * k2c + 2 * k3c + k4c))
    return mean, cov


def _steps_for(horizon: float, dt: float) -> Tuple[int, float]:
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    steps = max(step_index(horizon, dt, Interpolation.CEIL), 0)
    return steps, (horizon / steps if steps else dt)


def _integrate(rhs_for_step, state0: GaussianState, horizon: float, dt: float) -> GaussianTrajectory:
    """RK4 over [0, horizon]; rhs_for_step(i, t_end) gives the right-hand side of step i."""
    steps, h = _steps_for(horizon, dt)
    mean, cov = state0.mean.copy(), state0.cov.copy()
    times, states = [0.0], [state0]
    for i in range(steps):
        t = i * h
        mean, cov = _rk4_step(rhs_for_step(i, t + h), t, mean, cov, h)
        _check_pd(cov, t + h)
        times.append((i + 1) * h)
        states.append(GaussianState(mean=mean, cov=cov))
    return GaussianTrajectory(times=times, states=states)


def bw_ode_integrate(
    potential: ParametricPotential,
    theta,
    state0: GaussianState,
    horizon: float,
    dt: float,
    beta: float = 1.0,
    order: Optional[int] = None,
) -> GaussianTrajectory:
    """
    Classical RK4 on (mu, Sigma) with Sigma symmetrized at every stage.

    dt is shrunk slightly if needed so that the last node lands on the horizon.

    Raises:
        LostPositiveDefiniteness: If Sigma stops being positive definite (dt too large)
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    inv_beta = _inverse_temperature(beta)
    def rhs(t, m, c):
        return _flow_rhs(potential, theta, m, c, inv_beta, order)

    return _integrate(lambda i, t_end: rhs, state0, horizon, dt)


def bw_estimated_ode(
    potential: ParametricPotential,
    estimate: Union[np.ndarray, Sequence[float], EstimatorTrajectory],
    state0: GaussianState,
    horizon: float,
    dt: float,
    delta: Optional[float] = None,
    beta: float = 1.0,
    convention: Interpolation = Interpolation.CEIL,
    order: Optional[int] = None,
) -> GaussianTrajectory:
    """
    The flow with an estimated parameter: a fixed theta_hat, or an estimator
    trajectory whose entry ceil(t/delta) drives the interval ending at t.

    Raises:
        ConfigError: If a trajectory is given without delta
        TrajectoryTooShort: If the trajectory ends before the horizon
    """
    inv_beta = _inverse_temperature(beta)
    if not isinstance(estimate, EstimatorTrajectory):
        return bw_ode_integrate(potential, estimate, state0, horizon, dt, beta, order)
    if delta is None:
        raise ConfigError("an estimator trajectory needs the JKO step delta")
    trajectory = estimate

    def theta_for(t: float) -> np.ndarray:
        k = max(1, step_index(t, delta, convention))
        return trajectory.theta_at(min(k, len(trajectory)))

    needed = step_index(horizon, delta, convention)
    if needed > len(trajectory):
        raise TrajectoryTooShort(
            f"horizon needs {needed} estimates, trajectory has {len(trajectory)}",
            needed=needed, available=len(trajectory),
        )

    def rhs_for_step(i: int, t_end: float):
        theta = theta_for(t_end)
        return lambda t, m, c: _flow_rhs(potential, theta, m, c, inv_beta, order)

    return _integrate(rhs_for_step, state0, horizon, dt)


def bw_jko_step(
    state: GaussianState,
    potential: ParametricPotential,
    theta,
    delta: float,
    beta: float = 1.0,
    tol: float = 1e-12,
    max_iter: int = 500,
    relaxation: float = 1.0,
    order: Optional[int] = None,
) -> GaussianState:
    """
    One Gaussian-restricted JKO step by fixed point on the first-order conditions.

    Args:
        state: Previous state (mu_0, Sigma_0)
        potential: Parametric family
        theta: Parameter of the step's drift
        delta: JKO time step
        beta: Inverse temperature
        tol: Stop when the largest change in (mu, Sigma) is below tol
        max_iter: Iteration cap
        relaxation: Weight of the new iterate (1 = plain fixed point)

    Raises:
        FixedPointDiverged: If the iteration does not settle
        LostPositiveDefiniteness: If the map matrix or Sigma loses definiteness
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    inv_beta = _inverse_temperature(beta)
    mean0, cov0 = state.mean, state.cov
    mean, cov = mean0.copy(), cov0.copy()
    d = mean.size
    change = float("inf")
    for iteration in range(1, max_iter + 1):
        e = _expect(potential, theta, mean, cov, order)
        cov_inv = np.linalg.inv(cov)
        hessian = _symmetric(e.grad_cross @ cov_inv)
        S = np.eye(d) + delta * (hessian - inv_beta * cov_inv)
        S = _symmetric(S)
        if np.min(np.linalg.eigvalsh(S)) <= 0:
            raise LostPositiveDefiniteness("optimal map matrix is not positive definite; delta too large", delta=delta)
        S_inv = np.linalg.inv(S)
        new_cov = _symmetric(S_inv @ cov0 @ S_inv)
        new_mean = mean0 - delta * e.mean_grad
        new_mean = (1.0 - relaxation) * mean + relaxation * new_mean
        new_cov = (1.0 - relaxation) * cov + relaxation * new_cov
        if not (np.all(np.isfinite(new_mean)) and np.all(np.isfinite(new_cov))):
            raise FixedPointDiverged("BW fixed point produced non-finite values", iteration=iteration)
        change = max(float(np.max(np.abs(new_mean - mean))), float(np.max(np.abs(new_cov - cov))))
        mean, cov = new_mean, new_cov
        if change < tol:
            logger.debug(f"BW-JKO step settled after {iteration} iterations")
            _check_pd(cov, 0.0)
            return GaussianState(mean=mean, cov=cov)
    raise FixedPointDiverged(
        f"BW fixed point did not settle in {max_iter} iterations (change {change:.3e})",
        iterations=max_iter, change=change,
    )


def bw_jko_run(
    state0: GaussianState,
    potential: ParametricPotential,
    theta,
    delta: float,
    horizon: float,
    beta: float = 1.0,
    order: Optional[int] = None,
) -> GaussianTrajectory:
    """ceil(T/delta) BW-JKO steps; node k sits at k*delta."""
    steps = step_index(horizon, delta)
    times, states = [0.0], [state0]
    for k in range(1, steps + 1):
        states.append(bw_jko_step(states[-1], potential, theta, delta, beta, order=order))
        times.append(k * delta)
    return GaussianTrajectory(times=times, states=states)


def bw_discretization_errors(
    potential: ParametricPotential,
    theta,
    state0: GaussianState,
    horizon: float,
    deltas: Sequence[float],
    beta: float = 1.0,
    ode_dt: float = 1e-3,
) -> List[Dict[str, float]]:
    """
    Max over the JKO nodes of |mu_delta - mu| and |Sigma_delta - Sigma| against
    an RK4 reference aligned with each delta.
    """
    results = []
    for delta in deltas:
        jko = bw_jko_run(state0, potential, theta, delta, horizon, beta)
        substeps = max(1, int(round(delta / ode_dt)))
        steps = len(jko.states) - 1
        reference = bw_ode_integrate(potential, theta, state0, steps * delta, delta / substeps, beta)
        mean_error = cov_error = 0.0
        for k, state in enumerate(jko.states):
            ref = reference.states[k * substeps]
            mean_error = max(mean_error, float(np.max(np.abs(state.mean - ref.mean))))
            cov_error = max(cov_error, float(np.max(np.abs(state.cov - ref.cov))))
        results.append({"delta": float(delta), "mean_error": mean_error, "cov_error": cov_error})
        logger.info(f"BW discretization at delta={delta}: mean {mean_error:.3e}, cov {cov_error:.3e}")
    return results


def _limit_rhs(
    potential: ParametricPotential,
    theta: np.ndarray,
    tau: TauField,
    mean: np.ndarray,
    cov: np.ndarray,
    v_mean: np.ndarray,
    v_cov: np.ndarray,
    s: np.ndarray,
    order,
) -> Moments:
    """Linearization of the flow at (mean, cov) in direction (v_mean, v_cov), forced by grad tau . s."""
    if potential.is_quadratic:
        A = potential.precision
        push = tau.grad_tau(mean[None, :])[0] @ s
        return -A @ v_mean - push, -(A @ v_cov + v_cov @ A)

    x, w = quadrature_points(mean, cov, order)
    y = x - mean
    cov_inv = np.linalg.inv(cov)
    B = cov_inv @ v_cov @ cov_inv
    omega = y @ (cov_inv @ v_mean) + 0.5 * (np.einsum("ni,ij,nj->n", y, B, y) - np.trace(cov_inv @ v_cov))
    g = potential.grad_x(theta, x)
    push = tau.grad_tau(x) @ s
    wo = w * omega
    d_mean_grad = wo @ g
    d_cross = (g * wo[:, None]).T @ y - np.outer(w @ g, v_mean) + (push * w[:, None]).T @ y
    return -d_mean_grad - w @ push, -(d_cross + d_cross.T)


def _interpolated(states: GaussianTrajectory, index: int, fraction: float) -> Moments:
    a = states.states[index]
    if fraction == 0.0:
        return a.mean, a.cov
    b = states.states[index + 1]
    return (1 - fraction) * a.mean + fraction * b.mean, (1 - fraction) * a.cov + fraction * b.cov


def bw_limit_integrate(
    system: str,
    potential: ParametricPotential,
    theta,
    tau: TauField,
    states: GaussianTrajectory,
    noise: Union[np.ndarray, Sequence[float], NoisePath],
    order: Optional[int] = None,
) -> BwLimitTrajectory:
    """
    Linear limit system for (V_mu, V_Sigma) along a precomputed Gaussian trajectory.

    Args:
        system: "ode" (constant Z forcing, RK4) or "sde" (W(t)/t forcing,
            explicit Euler with the end-of-step W)
        potential: Parametric family
        theta: True parameter
        tau: Direction field tau = grad_theta Psi' gamma
        states: Trajectory p_t on a uniform time grid (from bw_ode_integrate)
        noise: Z (vector or fixed-Gaussian path) for "ode", a Brownian path on
            the same time nodes for "sde"
        order: Quadrature order for non-quadratic potentials

    Raises:
        ConfigError: If the noise does not match the system or the time nodes
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    times = np.asarray(states.times)
    steps = times.size - 1
    d = states.states[0].dim
    v_mean, v_cov = np.zeros(d), np.zeros((d, d))
    out = [BwLimitState.zero(d)]

    if system == "ode":
        if isinstance(noise, NoisePath):
            if noise.kind != NoiseKind.FIXED_GAUSSIAN:
                raise ConfigError("the ode limit system takes a fixed Gaussian Z")
            z = noise.values[0]
        else:
            z = np.atleast_1d(np.asarray(noise, dtype=float))
        for i in range(steps):
            dt = times[i + 1] - times[i]

            def rhs(frac, vm, vc):
                m, c = _interpolated(states, i, frac)
                return _limit_rhs(potential, theta, tau, m, c, vm, vc, z, order)

            k1m, k1c = rhs(0.0, v_mean, v_cov)
            k2m, k2c = rhs(0.5, v_mean + dt / 2 * k1m, v_cov + dt / 2 * k1c)
            k3m, k3c = rhs(0.5, v_mean + dt / 2 * k2m, v_cov + dt / 2 * k2c)
            k4m, k4c = rhs(1.0, v_mean + dt * k3m, v_cov + dt * k3c)
            v_mean = v_mean + dt / 6 * (k1m + 2 * k2m + 2 * k3m + k4m)
            v_cov = _symmetric(v_cov + dt / 6 * (k1c + 2 * k2c + 2 * k3c + k4c))
            out.append(BwLimitState(v_mean=v_mean, v_cov=v_cov))
    elif system == "sde":
        if not isinstance(noise, NoisePath) or noise.kind not in (NoiseKind.BROWNIAN, NoiseKind.WHITE_INCREMENTS):
            raise ConfigError("the sde limit system takes a Brownian noise path")
        if noise.time_grid.steps != steps or not np.allclose(noise.time_grid.nodes, times, rtol=0.0, atol=1e-12):
            raise ConfigError("noise and state trajectory must share the time nodes")
        for i in range(steps):
            dt = times[i + 1] - times[i]
            s = noise.values[i + 1] / times[i + 1]
            state = states.states[i]
            dm, dc = _limit_rhs(potential, theta, tau, state.mean, state.cov, v_mean, v_cov, s, order)
            v_mean = v_mean + dt * dm
            v_cov = _symmetric(v_cov + dt * dc)
            out.append(BwLimitState(v_mean=v_mean, v_cov=v_cov))
    else:
        raise ConfigError(f"unknown limit system {system!r}; expected 'ode' or 'sde'")

    return BwLimitTrajectory(times=list(times), states=out)
