"""
Crank-Nicolson solver for d_t rho = div(rho grad Psi) + beta^-1 Laplacian rho on [-D, D].

The drift term is discretized in conservative form with arithmetic-mean face
values. The faces next to x = -D and x = D carry no flux, so the boundary
nodes stay at zero and the trapezoidal mass is conserved by every step. The
drift may change from step to step (online estimates), which is expressed by
a drift provider: a callable from the time-step index i (step t_i -> t_{i+1})
to grad Psi at the grid nodes.
"""

import logging
import math
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.linalg import solve_banded

from ..config.settings import get_settings
from ..models.estimates import EstimatorTrajectory, SchemeTag
from ..models.grids import DensityGrid, FieldGrid, Grid1D, Interpolation, TimeGrid
from ..services.langevin_sampler import ou_exact_moments
from .exceptions import SolverBreakdown
from .grid_core import gaussian_density, step_index
from .potential import DriftPotential, ParametricPotential, estimated_drift

logger = logging.getLogger(__name__)

DriftProvider = Callable[[int], np.ndarray]


def fp_operator_bands(gradient: np.ndarray, grid: Grid1D, beta: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Tridiagonal operator L on the interior nodes 1..J-1.

    (L rho)_j = [rho_{j+1/2} g_{j+1/2} - rho_{j-1/2} g_{j-1/2}] / h
                + (rho_{j+1} - 2 rho_j + rho_{j-1}) / (beta h^2)

    The faces x_{1/2} and x_{J-1/2} carry zero flux, so every column of L sums
    to zero.

    Returns:
        (lower, diag, upper), each of length J-1; lower[0] and upper[-1] are zero
    """
    h = grid.h
    g = np.asarray(gradient, dtype=float)
    if g.shape != (grid.size,) or not np.all(np.isfinite(g)):
        raise ValueError("drift gradient must be finite at every node")
    face = 0.5 * (g[1:] + g[:-1])
    left, right = face[:-1], face[1:]
    diffusion = 0.0 if math.isinf(beta) else 1.0 / (beta * h * h)
    lower = -left / (2.0 * h) + diffusion
    diag = (right - left) / (2.0 * h) - 2.0 * diffusion
    upper = right / (2.0 * h) + diffusion
    diag[0] = right[0] / (2.0 * h) - diffusion
    diag[-1] = -left[-1] / (2.0 * h) - diffusion
    lower[0] = 0.0
    upper[-1] = 0.0
    return lower, diag, upper


def apply_bands(bands: Tuple[np.ndarray, np.ndarray, np.ndarray], interior: np.ndarray) -> np.ndarray:
    lower, diag, upper = bands
    out = diag * interior
    out[1:] += lower[1:] * interior[:-1]
    out[:-1] += upper[:-1] * interior[1:]
    return out


def cn_system(bands: Tuple[np.ndarray, np.ndarray, np.ndarray], nu: float) -> np.ndarray:
    """Banded storage of I - nu L / 2 for scipy.linalg.solve_banded."""
    lower, diag, upper = bands
    ab = np.zeros((3, diag.size))
    ab[0, 1:] = -0.5 * nu * upper[:-1]
    ab[1] = 1.0 - 0.5 * nu * diag
    ab[2, :-1] = -0.5 * nu * lower[1:]
    return ab


def cn_advance(
    bands: Tuple[np.ndarray, np.ndarray, np.ndarray],
    interior: np.ndarray,
    nu: float,
    forcing: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    One Crank-Nicolson step (I - nu L/2) u' = (I + nu L/2) u + nu f.

    Raises:
        SolverBreakdown: On a singular system or a non-finite solution
    """
    rhs = interior + 0.5 * nu * apply_bands(bands, interior)
    if forcing is not None:
        rhs = rhs + nu * forcing
    try:
        out = solve_banded((1, 1), cn_system(bands, nu), rhs)
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SolverBreakdown(f"tridiagonal solve failed: {e}", nu=nu) from e
    if not np.all(np.isfinite(out)):
        raise SolverBreakdown("tridiagonal solve produced non-finite values", nu=nu)
    return out


def cn_solve(
    rho0: DensityGrid,
    drift_provider: DriftProvider,
    beta: float,
    time_grid: TimeGrid,
    renormalize: Optional[bool] = None,
) -> FieldGrid:
    """
    Crank-Nicolson evolution of rho0 over the time grid.

    Args:
        rho0: Initial density
        drift_provider: Step index i -> grad Psi at the nodes for t_i -> t_{i+1}
        beta: Inverse temperature
        time_grid: Time grid on [0, T]
        renormalize: Clamp undershoots at zero and rescale to unit mass after every
            step (settings default); the operator conserves mass, so this only
            removes rounding drift and tail oscillations

    Returns:
        FieldGrid whose row i is rho(t_i, .)

    Raises:
        SolverBreakdown: On a zero pivot or non-finite values
    """
    settings = get_settings()
    if renormalize is None:
        renormalize = settings.renormalize_every_step
    grid = rho0.grid
    h, nu = grid.h, time_grid.nu
    rows = np.zeros((time_grid.steps + 1, grid.size))
    rows[0] = rho0.values
    interior = rho0.values[1:-1].copy()
    cached_gradient = None
    bands = None
    worst_mass_drift = 0.0
    for i in range(time_grid.steps):
        gradient = drift_provider(i)
        if bands is None or gradient is not cached_gradient:
            bands = fp_operator_bands(gradient, grid, beta)
            cached_gradient = gradient
        mass_before = h * np.sum(interior)
        interior = cn_advance(bands, interior, nu)
        mass_after = h * np.sum(interior)
        worst_mass_drift = max(worst_mass_drift, abs(mass_after - mass_before))
        if renormalize:
            interior = np.maximum(interior, 0.0)
            mass_after = h * np.sum(interior)
            if not mass_after > 0:
                raise SolverBreakdown("Crank-Nicolson step lost all mass", step=i)
            interior = interior / mass_after
        rows[i + 1, 1:-1] = interior
    if worst_mass_drift > settings.mass_tol:
        logger.warning(f"CN solve lost mass: worst per-step drift {worst_mass_drift:.2e} exceeds {settings.mass_tol:.1e}")
    logger.debug(f"CN solve done: {time_grid.steps} steps, worst per-step mass drift {worst_mass_drift:.2e}")
    return FieldGrid(grid=grid, time_grid=time_grid, values=rows)


def static_drift(drift: DriftPotential, grid: Grid1D) -> DriftProvider:
    """The same gradient at every step."""
    gradient = drift.gradient_on(grid)
    return lambda i: gradient


def online_drift(
    potential: ParametricPotential,
    trajectory: EstimatorTrajectory,
    scheme: SchemeTag,
    delta: float,
    grid: Grid1D,
    time_grid: TimeGrid,
    convention: Interpolation = Interpolation.CEIL,
) -> DriftProvider:
    """
    Gradient of the scheme's estimate indexed ceil(t_{i+1}/delta) (or floor) on step i.

    Raises:
        TrajectoryTooShort: When a step needs an estimate past the trajectory's end
    """
    cache: Dict[int, np.ndarray] = {}

    def provider(i: int) -> np.ndarray:
        k = max(1, step_index(time_grid.nodes[i + 1], delta, convention))
        if k not in cache:
            cache[k] = estimated_drift(potential, trajectory, scheme, k).gradient_on(grid)
        return cache[k]

    return provider


def analytic_ou_density_field(
    theta: float,
    mu0: float,
    var0: float,
    beta: float,
    grid: Grid1D,
    time_grid: TimeGrid,
) -> FieldGrid:
    """Rows N(mu_t, var_t) of the 1D OU marginals, sampled and renormalized on the grid."""
    if var0 <= 0:
        raise ValueError("initial variance must be positive for a density field")
    rows = []
    for t in time_grid.nodes:
        mu_t, var_t = ou_exact_moments(theta, mu0, var0, float(t), beta)
        rows.append(gaussian_density(grid, float(mu_t), float(var_t)).values)
    return FieldGrid(grid=grid, time_grid=time_grid, values=np.array(rows))
