"""
Langevin sampler.

Generates observations X(i*eta) of dX = -grad Psi(X) dt + sqrt(2/beta) dB:
exactly for quadratic (Ornstein-Uhlenbeck) potentials, by Euler-Maruyama
otherwise. Batches for the online schemes come from distinct substreams.
"""

import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import lfilter

from ..core.exceptions import ConfigError, Diverged
from ..core.potential import ParametricPotential, QuadraticMatrixPotential, gibbs_density
from ..models.estimates import BatchSet, InitialKind, InitialLaw, SamplePath
from ..models.grids import Grid1D
from .random_streams import substream

logger = logging.getLogger(__name__)

OVERFLOW_GUARD = 1e12


def ou_exact_moments(theta, mu0, var0, t: float, beta: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean and variance of the isotropic OU marginal at time t.

    mu_t = theta + (mu0 - theta) e^{-t},  var_t = 1/beta - (1/beta - var0) e^{-2t}
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    decay = math.exp(-t)
    mu_t = theta + (np.asarray(mu0, dtype=float) - theta) * decay
    var_t = 1.0 / beta - (1.0 / beta - np.asarray(var0, dtype=float)) * decay * decay
    return mu_t, var_t


def ou_transition(precision: np.ndarray, eta: float, beta: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact OU transition over eta: X' - theta = F (X - theta) + N(0, Q).

    F = exp(-A eta), Q = (I - exp(-2 A eta)) A^{-1} / beta. beta = inf gives Q = 0.
    """
    eigenvalues, vectors = np.linalg.eigh(precision)
    F = (vectors * np.exp(-eigenvalues * eta)) @ vectors.T
    if math.isinf(beta):
        return F, np.zeros_like(precision)
    q = -np.expm1(-2.0 * eigenvalues * eta) / (beta * eigenvalues)
    return F, (vectors * q) @ vectors.T


def _cholesky_psd(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, vectors = np.linalg.eigh(0.5 * (matrix + matrix.T))
    return vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def draw_initial(
    potential: ParametricPotential,
    theta: np.ndarray,
    beta: float,
    initial: InitialLaw,
    rng: np.random.Generator,
    count: int,
) -> np.ndarray:
    """count draws of X(0), shape (count, d)."""
    d = potential.dim_x
    if initial.kind == InitialKind.POINT:
        return np.tile(initial.mean_vector(d), (count, 1))
    if initial.kind == InitialKind.GAUSSIAN:
        root = _cholesky_psd(initial.covariance_matrix(d))
        return initial.mean_vector(d) + rng.standard_normal((count, d)) @ root.T
    # stationary
    if math.isinf(beta):
        return np.tile(theta, (count, 1))
    if potential.is_quadratic:
        cov = np.linalg.inv(beta * potential.precision)
        return theta + rng.standard_normal((count, d)) @ _cholesky_psd(cov).T
    if d != 1:
        raise ConfigError("stationary initial law for non-quadratic potentials is only available for d = 1")
    return _draw_gibbs_1d(potential, theta, beta, rng, count)


def _draw_gibbs_1d(potential, theta, beta, rng, count) -> np.ndarray:
    grid = Grid1D(half_width=float(abs(theta[0])) + 12.0 / math.sqrt(beta), intervals=8000)
    pi = gibbs_density(potential, theta, beta, grid)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (pi.values[1:] + pi.values[:-1]) * grid.h)])
    cdf /= cdf[-1]
    u = rng.random(count)
    return np.interp(u, cdf, grid.nodes)[:, None]


def sample_ou_path(
    theta,
    beta: float,
    eta: float,
    n: int,
    initial: InitialLaw,
    seed: int,
    precision: Optional[np.ndarray] = None,
    key: Sequence[int] = (0, 0),
) -> SamplePath:
    """
    Exact OU observations X(eta), ..., X(n eta).

    Args:
        theta: Center of the potential, shape (d,)
        beta: Inverse temperature; math.inf gives the noiseless flow
        eta: Observation spacing
        n: Number of observations
        initial: Law of X(0)
        seed: 64-bit seed
        precision: Matrix A of the quadratic potential, identity by default
        key: Substream key

    Returns:
        The sampled path
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    A = np.eye(d) if precision is None else np.atleast_2d(np.asarray(precision, dtype=float))
    rng = substream(seed, *key)

    x0 = draw_initial(QuadraticMatrixPotential(A), theta, beta, initial, rng, 1)[0]
    F, Q = ou_transition(A, eta, beta)
    noise = rng.standard_normal((n, d)) @ _cholesky_psd(Q).T

    if np.allclose(A, A[0, 0] * np.eye(d)):
        f = F[0, 0]
        offsets = lfilter([1.0], [1.0, -f], noise, axis=0, zi=(f * (x0 - theta))[None, :])[0]
    else:
        offsets = np.empty((n, d))
        current = x0 - theta
        for i in range(n):
            current = F @ current + noise[i]
            offsets[i] = current
    return SamplePath(
        observations=theta + offsets, spacing=eta, initial=initial, seed=seed, key=list(key)
    )


def sample_em_path(
    potential: ParametricPotential,
    theta,
    beta: float,
    eta: float,
    n: int,
    substeps: int,
    initial: InitialLaw,
    seed: int,
    key: Sequence[int] = (0, 0),
) -> SamplePath:
    """
    Euler-Maruyama observations with internal step eta/substeps.

    Raises:
        Diverged: If the state exceeds the overflow guard
    """
    if substeps < 1:
        raise ValueError("substeps must be at least 1")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rng = substream(seed, *key)
    x = draw_initial(potential, theta, beta, initial, rng, 1)[0]
    dt = eta / substeps
    scale = 0.0 if math.isinf(beta) else math.sqrt(2.0 * dt / beta)
    observations = np.empty((n, potential.dim_x))
    for i in range(n):
        increments = rng.standard_normal((substeps, potential.dim_x))
        for dz in increments:
            x = x - potential.grad_x(theta, x[None, :])[0] * dt + scale * dz
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > OVERFLOW_GUARD:
            raise Diverged(
                f"Euler-Maruyama path left the overflow guard at observation {i + 1}",
                observation=i + 1, dt=dt,
            )
        observations[i] = x
    return SamplePath(observations=observations, spacing=eta, initial=initial, seed=seed, key=list(key))


def sample_path(
    potential: ParametricPotential,
    theta,
    beta: float,
    eta: float,
    n: int,
    initial: InitialLaw,
    seed: int,
    substeps: int = 100,
    key: Sequence[int] = (0, 0),
) -> SamplePath:
    """Exact OU for quadratic potentials, Euler-Maruyama otherwise."""
    if potential.is_quadratic:
        return sample_ou_path(theta, beta, eta, n, initial, seed, precision=potential.precision, key=key)
    return sample_em_path(potential, theta, beta, eta, n, substeps, initial, seed, key=key)


def sample_batches(
    potential: ParametricPotential,
    theta,
    beta: float,
    eta: float,
    m: int,
    k: int,
    initial: InitialLaw,
    seed: int,
    replication: int = 0,
    substeps: int = 100,
) -> BatchSet:
    """k independent batches of m observations; batch j uses substream (j, replication)."""
    batches = [
        sample_path(potential, theta, beta, eta, m, initial, seed, substeps=substeps, key=(j, replication))
        for j in range(k)
    ]
    logger.debug(f"Sampled {k} batches of size {m} (seed={seed}, replication={replication})")
    return BatchSet(batches=batches)


def ou_marginal_ensemble(
    theta,
    beta: float,
    t: float,
    count: int,
    initial: InitialLaw,
    seed: int,
    precision: Optional[np.ndarray] = None,
) -> np.ndarray:
    """count independent exact draws of X(t), shape (count, d)."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    d = theta.size
    A = np.eye(d) if precision is None else np.atleast_2d(np.asarray(precision, dtype=float))
    rng = substream(seed, 0, 0)
    x0 = draw_initial(QuadraticMatrixPotential(A), theta, beta, initial, rng, count)
    F, Q = ou_transition(A, t, beta)
    return theta + (x0 - theta) @ F.T + rng.standard_normal((count, d)) @ _cholesky_psd(Q).T


def em_marginal_ensemble(
    potential: ParametricPotential,
    theta,
    beta: float,
    t: float,
    dt: float,
    count: int,
    initial: InitialLaw,
    seed: int,
) -> np.ndarray:
    """count Euler-Maruyama draws of X(t) with step dt, vectorized across replications."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rng = substream(seed, 0, 0)
    x = draw_initial(potential, theta, beta, initial, rng, count)
    steps = max(1, int(round(t / dt)))
    scale = 0.0 if math.isinf(beta) else math.sqrt(2.0 * dt / beta)
    for _ in range(steps):
        x = x - potential.grad_x(theta, x) * dt + scale * rng.standard_normal(x.shape)
        if np.max(np.abs(x)) > OVERFLOW_GUARD:
            raise Diverged("Euler-Maruyama ensemble left the overflow guard", dt=dt)
    return x
