"""
Functionals on grid densities.

Trapezoidal quadrature everywhere. Because densities vanish at both boundary
nodes the trapezoid rule reduces to h times the plain sum.
"""

import logging
import math
from typing import Callable

import numpy as np
from scipy.integrate import trapezoid

from ..models.grids import DensityGrid, FieldGrid, Grid1D, Interpolation, TimeGrid
from .exceptions import AllMassLost, GridMismatch

logger = logging.getLogger(__name__)

ENTROPY_FLOOR = 1e-300


def check_same_grid(a: Grid1D, b: Grid1D) -> None:
    """Raise GridMismatch unless both grids have the same D and J."""
    if a != b:
        raise GridMismatch(
            f"grids differ: D={a.half_width}, J={a.intervals} vs D={b.half_width}, J={b.intervals}",
            left=str(a), right=str(b),
        )


def check_same_time_grid(a: TimeGrid, b: TimeGrid) -> None:
    if a != b:
        raise GridMismatch(
            f"time grids differ: T={a.horizon}, I={a.steps} vs T={b.horizon}, I={b.steps}",
            left=str(a), right=str(b),
        )


def integrate(grid: Grid1D, values: np.ndarray) -> float:
    """Trapezoidal integral of node values over [-D, D]."""
    return float(trapezoid(values, dx=grid.h))


def second_moment(rho: DensityGrid) -> float:
    x = rho.grid.nodes
    return integrate(rho.grid, x * x * rho.values)


def mean(rho: DensityGrid) -> float:
    return integrate(rho.grid, rho.grid.nodes * rho.values)


def variance(rho: DensityGrid) -> float:
    m = mean(rho)
    return second_moment(rho) - m * m


def entropy(rho: DensityGrid) -> float:
    """S(rho) = -int rho log rho with 0 log 0 = 0."""
    v = np.where(rho.values < ENTROPY_FLOOR, 0.0, rho.values)
    logs = np.log(v, out=np.zeros_like(v), where=v > 0)
    return -integrate(rho.grid, v * logs)


def potential_energy(rho: DensityGrid, psi_values: np.ndarray) -> float:
    """E(rho) = int Psi rho for Psi sampled at the grid nodes."""
    return integrate(rho.grid, psi_values * rho.values)


def free_energy_from_values(rho: DensityGrid, psi_values: np.ndarray, beta: float) -> float:
    return potential_energy(rho, psi_values) - entropy(rho) / beta


def free_energy(rho: DensityGrid, potential, theta, beta: float) -> float:
    """
    Free energy E_Psi(rho) - S(rho)/beta for a parametric potential at theta.

    Args:
        rho: Grid density
        potential: ParametricPotential with dim_x == 1
        theta: Parameter vector
        beta: Inverse temperature (> 0)

    Returns:
        The free energy
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = rho.grid.nodes[:, None]
    psi_values = potential.psi(np.atleast_1d(np.asarray(theta, dtype=float)), x)
    return free_energy_from_values(rho, psi_values, beta)


def renormalize(rho: DensityGrid) -> DensityGrid:
    """Rescale to unit trapezoidal mass; AllMassLost if no positive mass is left."""
    mass = rho.mass()
    if not mass > 0 or not math.isfinite(mass):
        raise AllMassLost("density has no positive mass to renormalize", mass=mass)
    return DensityGrid(grid=rho.grid, values=rho.values / mass)


def normalized_density(grid: Grid1D, values) -> DensityGrid:
    """Clamp, zero the boundary and renormalize raw node values."""
    return renormalize(DensityGrid.from_values(grid, values))


def sample_density(grid: Grid1D, fn: Callable[[np.ndarray], np.ndarray]) -> DensityGrid:
    """Sample a density function at the nodes and renormalize on the grid."""
    return normalized_density(grid, fn(grid.nodes))


def gaussian_density(grid: Grid1D, mu: float, var: float) -> DensityGrid:
    return sample_density(grid, lambda x: gaussian_pdf(x, mu, var))


def gaussian_pdf(x: np.ndarray, mu: float, var: float) -> np.ndarray:
    return np.exp(-0.5 * (x - mu) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def l1_distance(a: DensityGrid, b: DensityGrid) -> float:
    check_same_grid(a.grid, b.grid)
    return integrate(a.grid, np.abs(a.values - b.values))


def linf_distance(a: DensityGrid, b: DensityGrid) -> float:
    check_same_grid(a.grid, b.grid)
    return float(np.max(np.abs(a.values - b.values)))


def step_index(t: float, delta: float, convention: Interpolation = Interpolation.CEIL) -> int:
    """
    JKO step index for time t: ceil(t/delta) or floor(t/delta).

    Ratios within 1e-9 of an integer snap to it so that t = k*delta computed in
    floating point maps to k under both conventions.
    """
    ratio = t / delta
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, abs(ratio)):
        return int(nearest)
    if convention == Interpolation.CEIL:
        return int(math.ceil(ratio))
    return int(math.floor(ratio))


def zero_field(grid: Grid1D, time_grid: TimeGrid) -> FieldGrid:
    return FieldGrid(
        grid=grid, time_grid=time_grid,
        values=np.zeros((time_grid.steps + 1, grid.size)),
    )


def scaled_field(
    grid: Grid1D,
    time_grid: TimeGrid,
    rows: np.ndarray,
    scale: float = 1.0,
) -> FieldGrid:
    """Build a FieldGrid from raw rows, forcing the Dirichlet columns to zero."""
    values = scale * np.array(rows, dtype=float, copy=True)
    values[:, 0] = 0.0
    values[:, -1] = 0.0
    return FieldGrid(grid=grid, time_grid=time_grid, values=values)
