"""
Limiting fields of the scaled density errors.

    d_t V = div(V grad Psi) + beta^-1 Laplacian V + div(rho grad tau . s(t)),  V(0, .) = 0

with s(t) a constant Gaussian Z (offline), W(t)/t (online cumulative), white
noise (per batch) or the scaled estimator errors themselves. Time stepping
reuses the Crank-Nicolson machinery of the Fokker-Planck solver with the
forcing evaluated at the end of each step.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..models.estimates import EstimatorTrajectory
from ..models.fields import ForcingSpec, NoiseKind, NoisePath
from ..models.grids import FieldGrid, Interpolation, TimeGrid
from ..services.random_streams import substream
from .exceptions import TrajectoryTooShort
from .fokker_planck import cn_advance, fp_operator_bands
from .grid_core import scaled_field, step_index
from .potential import FrozenPotential, ParametricPotential, TauField

logger = logging.getLogger(__name__)


def brownian_path(
    time_grid: TimeGrid,
    dim: int,
    seed: int,
    key: Sequence[int] = (0, 0),
    kind: NoiseKind = NoiseKind.BROWNIAN,
) -> NoisePath:
    """W(t_i) with W(0) = 0 and independent N(0, nu I) increments."""
    rng = substream(seed, *key)
    increments = math.sqrt(time_grid.nu) * rng.standard_normal((time_grid.steps, dim))
    values = np.vstack([np.zeros((1, dim)), np.cumsum(increments, axis=0)])
    return NoisePath(time_grid=time_grid, values=values, kind=kind, seed=seed, key=list(key))


def white_increments_path(time_grid: TimeGrid, dim: int, seed: int, key: Sequence[int] = (0, 0)) -> NoisePath:
    """A Brownian path tagged for the white-noise scaling rule."""
    return brownian_path(time_grid, dim, seed, key, kind=NoiseKind.WHITE_INCREMENTS)


def fixed_gaussian_path(
    time_grid: TimeGrid,
    dim: int,
    seed: Optional[int] = None,
    key: Sequence[int] = (0, 0),
    z=None,
) -> NoisePath:
    """Constant Z over time; Z ~ N(0, I) from the seed unless given."""
    if z is None:
        if seed is None:
            raise ValueError("either z or a seed is required")
        z = substream(seed, *key).standard_normal(dim)
    z = np.atleast_1d(np.asarray(z, dtype=float))
    values = np.tile(z, (time_grid.steps + 1, 1))
    return NoisePath(time_grid=time_grid, values=values, kind=NoiseKind.FIXED_GAUSSIAN, seed=seed, key=list(key))


def subsample_path(path: NoisePath, factor: int) -> NoisePath:
    """Every factor-th node of a path, for nested refinement studies."""
    if factor < 1 or path.time_grid.steps % factor != 0:
        raise ValueError(f"factor {factor} does not divide {path.time_grid.steps} steps")
    coarse = TimeGrid(horizon=path.time_grid.horizon, steps=path.time_grid.steps // factor)
    return NoisePath(
        time_grid=coarse, values=path.values[::factor], kind=path.kind, seed=path.seed, key=path.key
    )


def simulate_field(
    spec: ForcingSpec,
    potential: ParametricPotential,
    theta,
    beta: float,
) -> FieldGrid:
    """
    Crank-Nicolson simulation of a limiting field.

    Args:
        spec: Density provider, direction field, noise and scaling rule
        potential: Parametric family
        theta: True parameter of the drift
        beta: Inverse temperature

    Returns:
        FieldGrid V on spec.density's grids with V(0, .) = 0

    Raises:
        SolverBreakdown: On a zero pivot or non-finite values
    """
    density = spec.density
    grid, time_grid = density.grid, density.time_grid
    h, nu = grid.h, time_grid.nu
    bands = fp_operator_bands(FrozenPotential(potential, theta).gradient_on(grid), grid, beta)
    rows = np.zeros((time_grid.steps + 1, grid.size))
    interior = np.zeros(grid.size - 2)
    for i in range(time_grid.steps):
        s = spec.noise.forcing_scale(spec.rule, i)
        flux = density.row(i + 1) * spec.tau.forcing_direction_on(grid, s)
        forcing = (flux[2:] - flux[:-2]) / (2.0 * h)
        interior = cn_advance(bands, interior, nu, forcing)
        rows[i + 1, 1:-1] = interior
    logger.debug(f"Simulated {spec.rule.value} field over {time_grid.steps} steps")
    return scaled_field(grid, time_grid, rows)


def v1_closed_form_ou(
    gamma: float,
    noise: NoisePath,
    t: float,
    x,
    quad_points: int = 1,
) -> np.ndarray:
    """
    V1 on the stationary OU setup (rho = N(0, 1), theta = 0, beta = 1).

    x phi(x) is an eigenfunction of the OU generator with eigenvalue -1, so

        V1(t, x) = gamma x phi(x) int_0^t e^{-(t-s)} W(s)/s ds.

    The integral uses the noise grid: on each interval the step value
    W(s_{i+1})/s_{i+1} multiplies the kernel integrated by the midpoint rule
    with quad_points sub-points.
    """
    if quad_points < 1:
        raise ValueError("quad_points must be at least 1")
    x = np.asarray(x, dtype=float)
    nu = noise.time_grid.nu
    steps = min(step_index(t, nu, Interpolation.FLOOR), noise.time_grid.steps)
    if steps == 0:
        return np.zeros_like(x)
    ends = noise.time_grid.nodes[1: steps + 1]
    profile = noise.values[1: steps + 1, 0] / ends
    offsets = (np.arange(quad_points) + 0.5) / quad_points
    starts = ends - nu
    sub = starts[:, None] + nu * offsets[None, :]
    kernel = np.exp(-(t - sub)).mean(axis=1) * nu
    integral = float(np.sum(kernel * profile))
    phi = np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
    return gamma * x * phi * integral


def coupled_forcing_from_estimates(
    trajectory: EstimatorTrajectory,
    theta,
    m: int,
    delta: float,
    tau: Optional[TauField] = None,
    time_grid: Optional[TimeGrid] = None,
) -> NoisePath:
    """
    Noise path holding (m delta)^{1/2}(theta_hat^{i+1} - theta) at node i+1.

    The path lives on a time grid with nu = delta (by default one node per
    estimate); use it with ScalingRule.COUPLED and an identity TauField.

    Raises:
        TrajectoryTooShort: If the time grid needs more estimates than available
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if time_grid is None:
        time_grid = TimeGrid(horizon=len(trajectory) * delta, steps=len(trajectory))
    elif abs(time_grid.nu - delta) > 1e-9 * delta:
        raise ValueError(f"coupled forcing needs nu = delta, got nu={time_grid.nu}, delta={delta}")
    steps = time_grid.steps
    if steps > len(trajectory):
        raise TrajectoryTooShort(
            f"forcing needs {steps} estimates, trajectory has {len(trajectory)}",
            needed=steps, available=len(trajectory),
        )
    if tau is not None and tau.potential.dim_theta != theta.size:
        raise ValueError("tau field dimension does not match theta")
    values = np.zeros((steps + 1, theta.size))
    values[1:] = math.sqrt(m * delta) * (trajectory.estimates[:steps] - theta)
    return NoisePath(
        time_grid=time_grid,
        values=values,
        kind=NoiseKind.ESTIMATOR_COUPLED,
    )


def long_format_rows(field: FieldGrid) -> List[Tuple[float, float, float]]:
    """(t, x, value) rows, time-major, for contour plots."""
    t = field.time_grid.nodes
    x = field.grid.nodes
    return [
        (float(t[i]), float(x[j]), float(field.values[i, j]))
        for i in range(t.size)
        for j in range(x.size)
    ]
