"""
Tests for grid value objects and grid functionals.
"""

import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.statistical_jko.core.exceptions import AllMassLost, GridMismatch
from src.statistical_jko.core.grid_core import (
    entropy,
    free_energy,
    gaussian_density,
    l1_distance,
    linf_distance,
    mean,
    renormalize,
    scaled_field,
    step_index,
    variance,
    zero_field,
)
from src.statistical_jko.core.potential import gibbs_density
from src.statistical_jko.models.grids import DensityGrid, FieldGrid, Grid1D, Interpolation, TimeGrid


class TestGrids:
    """Grid geometry."""

    def test_grid_nodes_symmetric(self, grid):
        x = grid.nodes
        assert x.size == 201
        assert grid.h == pytest.approx(0.05)
        assert x[0] == -5.0 and x[-1] == 5.0
        assert np.array_equal(x[::-1], -x)

    def test_time_grid(self, time_grid):
        assert time_grid.nu == pytest.approx(0.01)
        assert time_grid.nodes[-1] == pytest.approx(0.5)
        assert time_grid.refined().steps == 100

    def test_invalid_grid_rejected(self):
        with pytest.raises(ValidationError):
            Grid1D(half_width=-1.0, intervals=10)
        with pytest.raises(ValidationError):
            Grid1D(half_width=1.0, intervals=2)


class TestDensityGrid:
    """Density invariants enforced on construction."""

    def test_negative_values_rejected(self, small_grid):
        values = np.zeros(small_grid.size)
        values[5] = -1.0
        with pytest.raises(ValidationError):
            DensityGrid(grid=small_grid, values=values)

    def test_boundary_must_vanish(self, small_grid):
        values = np.ones(small_grid.size)
        with pytest.raises(ValidationError):
            DensityGrid(grid=small_grid, values=values)

    def test_shape_must_match_grid(self, small_grid):
        with pytest.raises(ValidationError):
            DensityGrid(grid=small_grid, values=np.zeros(small_grid.size + 1))

    def test_values_read_only(self, rho0):
        with pytest.raises(ValueError):
            rho0.values[3] = 1.0

    def test_from_values_clamps(self, small_grid):
        values = np.full(small_grid.size, 0.1)
        values[3] = -1e-14
        rho = DensityGrid.from_values(small_grid, values)
        assert rho.values[0] == 0.0 and rho.values[-1] == 0.0
        assert rho.values[3] == 0.0


class TestFunctionals:
    """Mass, moments, entropy and distances."""

    def test_gaussian_has_unit_mass(self, rho0):
        assert rho0.mass() == pytest.approx(1.0, abs=1e-12)
        assert rho0.check_mass(1e-8)

    def test_gaussian_moments(self, rho0):
        assert mean(rho0) == pytest.approx(0.0, abs=1e-12)
        assert variance(rho0) == pytest.approx(1.44, abs=5e-3)

    def test_standard_normal_entropy(self, grid):
        rho = gaussian_density(grid, 0.0, 1.0)
        assert entropy(rho) == pytest.approx(0.5 * math.log(2 * math.pi * math.e), abs=1e-3)

    def test_gibbs_minimizes_free_energy(self, grid, rho0, ou_potential):
        gibbs = gibbs_density(ou_potential, [0.0], 1.0, grid)
        assert free_energy(gibbs, ou_potential, [0.0], 1.0) < free_energy(rho0, ou_potential, [0.0], 1.0)
        shifted = gaussian_density(grid, 0.5, 1.0)
        assert free_energy(gibbs, ou_potential, [0.0], 1.0) < free_energy(shifted, ou_potential, [0.0], 1.0)

    def test_renormalize(self, small_grid):
        values = np.zeros(small_grid.size)
        values[10:20] = 3.0
        rho = renormalize(DensityGrid(grid=small_grid, values=values))
        assert rho.mass() == pytest.approx(1.0)

    def test_renormalize_zero_mass(self, small_grid):
        rho = DensityGrid(grid=small_grid, values=np.zeros(small_grid.size))
        with pytest.raises(AllMassLost):
            renormalize(rho)

    def test_distances(self, grid):
        a = gaussian_density(grid, 0.0, 1.0)
        b = gaussian_density(grid, 1.0, 1.0)
        assert l1_distance(a, a) == 0.0
        assert l1_distance(a, b) > 0.5
        assert linf_distance(a, b) == pytest.approx(np.max(np.abs(a.values - b.values)))

    def test_distance_grid_mismatch(self, grid, small_grid):
        with pytest.raises(GridMismatch):
            l1_distance(gaussian_density(grid, 0.0, 1.0), gaussian_density(small_grid, 0.0, 1.0))


class TestStepIndex:
    """Time to JKO step mapping."""

    def test_exact_multiples_snap(self):
        assert step_index(0.3, 0.1) == 3
        assert step_index(0.3, 0.1, Interpolation.FLOOR) == 3
        assert step_index(0.5, 0.01) == 50

    def test_ceil_and_floor(self):
        assert step_index(0.25, 0.1) == 3
        assert step_index(0.25, 0.1, Interpolation.FLOOR) == 2

    def test_zero(self):
        assert step_index(0.0, 0.01) == 0


class TestFields:
    """Space-time fields."""

    def test_zero_field(self, small_grid, time_grid):
        field = zero_field(small_grid, time_grid)
        assert field.values.shape == (51, 61)
        assert field.has_zero_initial()

    def test_scaled_field_zeroes_boundary(self, small_grid):
        tg = TimeGrid(horizon=1.0, steps=4)
        rows = np.ones((5, small_grid.size))
        field = scaled_field(small_grid, tg, rows, scale=2.0)
        assert np.all(field.values[:, 0] == 0.0)
        assert np.all(field.values[:, 1:-1] == 2.0)

    def test_field_rejects_nonzero_boundary(self, small_grid):
        tg = TimeGrid(horizon=1.0, steps=2)
        with pytest.raises(ValidationError):
            FieldGrid(grid=small_grid, time_grid=tg, values=np.ones((3, small_grid.size)))

    def test_density_at(self, small_grid):
        tg = TimeGrid(horizon=1.0, steps=2)
        rho = gaussian_density(small_grid, 0.0, 1.0)
        field = FieldGrid(grid=small_grid, time_grid=tg, values=np.tile(rho.values, (3, 1)))
        assert np.array_equal(field.density_at(2).values, rho.values)


class TestReferenceValues:
    """Closed-form values on the reference setup."""

    def test_initial_free_energy(self, rho0, ou_potential):
        assert variance(rho0) == pytest.approx(1.44, abs=0.02)
        assert free_energy(rho0, ou_potential, [0.0], 1.0) == pytest.approx(-0.8814, abs=0.01)
