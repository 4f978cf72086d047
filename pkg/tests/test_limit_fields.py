"""
Tests for noise paths and the limiting-field simulator.
"""

import numpy as np
import pytest
from pydantic import ValidationError

from src.statistical_jko.core.exceptions import TrajectoryTooShort
from src.statistical_jko.core.fokker_planck import analytic_ou_density_field
from src.statistical_jko.core.grid_core import scaled_field
from src.statistical_jko.core.limit_fields import (
    brownian_path,
    coupled_forcing_from_estimates,
    fixed_gaussian_path,
    long_format_rows,
    simulate_field,
    subsample_path,
    v1_closed_form_ou,
    white_increments_path,
)
from src.statistical_jko.core.potential import TauField, ou_gamma
from src.statistical_jko.models.estimates import EstimatorTrajectory, SchemeTag
from src.statistical_jko.models.fields import ForcingSpec, NoiseKind, NoisePath, ScalingRule
from src.statistical_jko.models.grids import Grid1D, TimeGrid
from src.statistical_jko.services.diagnostics import relative_l2_error


def _oracle_error(ou_potential, intervals: int, steps: int, seed: int) -> float:
    grid = Grid1D(half_width=5.0, intervals=intervals)
    time_grid = TimeGrid(horizon=0.5, steps=steps)
    gamma = ou_gamma(1.0)
    tau = TauField.from_gamma(ou_potential, [0.0], gamma)
    noise = brownian_path(time_grid, 1, seed)
    density = analytic_ou_density_field(0.0, 0.0, 1.0, 1.0, grid, time_grid)
    spec = ForcingSpec(density=density, tau=tau, noise=noise, rule=ScalingRule.INVERSE_TIME)
    simulated = simulate_field(spec, ou_potential, [0.0], 1.0)
    rows = [v1_closed_form_ou(float(gamma[0, 0]), noise, float(t), grid.nodes) for t in time_grid.nodes]
    oracle = scaled_field(grid, time_grid, np.array(rows))
    return relative_l2_error(simulated, oracle, t_min=0.1, x_max=3.0)


class TestNoisePaths:
    """Brownian, white and fixed Gaussian paths."""

    def test_brownian_starts_at_zero(self, time_grid):
        path = brownian_path(time_grid, 2, seed=3)
        assert path.values.shape == (51, 2)
        assert np.all(path.values[0] == 0.0)
        assert path.kind == NoiseKind.BROWNIAN

    def test_reproducible_by_key(self, time_grid):
        a = brownian_path(time_grid, 1, seed=3, key=(0, 1))
        b = brownian_path(time_grid, 1, seed=3, key=(0, 1))
        c = brownian_path(time_grid, 1, seed=3, key=(0, 2))
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_white_path_tagged(self, time_grid):
        path = white_increments_path(time_grid, 1, seed=3)
        assert path.kind == NoiseKind.WHITE_INCREMENTS
        assert np.array_equal(path.values, brownian_path(time_grid, 1, seed=3).values)

    def test_fixed_gaussian(self, time_grid):
        path = fixed_gaussian_path(time_grid, 1, z=[0.7])
        assert np.all(path.values == 0.7)
        with pytest.raises(ValueError):
            fixed_gaussian_path(time_grid, 1)

    def test_path_invariants(self, time_grid):
        values = np.ones((time_grid.steps + 1, 1))
        with pytest.raises(ValidationError):
            NoisePath(time_grid=time_grid, values=values, kind=NoiseKind.BROWNIAN)
        values = np.arange(time_grid.steps + 1, dtype=float)
        with pytest.raises(ValidationError):
            NoisePath(time_grid=time_grid, values=values, kind=NoiseKind.FIXED_GAUSSIAN)

    def test_subsample(self, time_grid):
        path = brownian_path(time_grid, 1, seed=3)
        coarse = subsample_path(path, 5)
        assert coarse.time_grid.steps == 10
        assert np.array_equal(coarse.values[:, 0], path.values[::5, 0])
        with pytest.raises(ValueError):
            subsample_path(path, 3)

    def test_forcing_scale_rules(self):
        tg = TimeGrid(horizon=1.0, steps=4)
        path = NoisePath(time_grid=tg, values=[0.0, 0.5, 1.0, 0.5, 2.0], kind=NoiseKind.BROWNIAN)
        assert path.forcing_scale(ScalingRule.INVERSE_TIME, 1)[0] == pytest.approx(1.0 / 0.5)
        assert path.forcing_scale(ScalingRule.WHITE, 2)[0] == pytest.approx(-0.5 / 0.25)
        assert path.forcing_scale(ScalingRule.COUPLED, 3)[0] == pytest.approx(2.0 / 0.25)
        assert path.forcing_scale(ScalingRule.CONSTANT, 0)[0] == pytest.approx(0.5)


class TestSimulateField:
    """Crank-Nicolson simulation of limiting fields."""

    @pytest.fixture
    def ou_spec_parts(self, small_grid, ou_potential):
        time_grid = TimeGrid(horizon=0.3, steps=30)
        density = analytic_ou_density_field(0.0, 0.0, 1.0, 1.0, small_grid, time_grid)
        tau = TauField.from_gamma(ou_potential, [0.0], ou_gamma(1.0))
        return density, tau, time_grid

    def test_zero_noise_gives_zero_field(self, ou_spec_parts, ou_potential):
        density, tau, time_grid = ou_spec_parts
        spec = ForcingSpec(density=density, tau=tau, noise=fixed_gaussian_path(time_grid, 1, z=[0.0]),
                           rule=ScalingRule.CONSTANT)
        field = simulate_field(spec, ou_potential, [0.0], 1.0)
        assert np.all(field.values == 0.0)

    def test_linear_in_noise(self, ou_spec_parts, ou_potential):
        density, tau, time_grid = ou_spec_parts
        noise = brownian_path(time_grid, 1, seed=8)
        one = simulate_field(ForcingSpec(density=density, tau=tau, noise=noise, rule=ScalingRule.INVERSE_TIME),
                             ou_potential, [0.0], 1.0)
        two = simulate_field(ForcingSpec(density=density, tau=tau, noise=noise.scaled(2.0),
                                         rule=ScalingRule.INVERSE_TIME), ou_potential, [0.0], 1.0)
        assert one.has_zero_initial()
        assert np.allclose(two.values, 2.0 * one.values, atol=1e-12)

    def test_constant_forcing_is_odd(self, ou_spec_parts, ou_potential):
        density, tau, time_grid = ou_spec_parts
        spec = ForcingSpec(density=density, tau=tau, noise=fixed_gaussian_path(time_grid, 1, z=[1.0]),
                           rule=ScalingRule.CONSTANT)
        field = simulate_field(spec, ou_potential, [0.0], 1.0)
        assert np.allclose(field.values, -field.values[:, ::-1], atol=1e-12)
        assert np.abs(field.values[-1]).max() > 0.0

    def test_spec_rejects_mismatched_time_grid(self, ou_spec_parts):
        density, tau, _ = ou_spec_parts
        other = brownian_path(TimeGrid(horizon=0.3, steps=10), 1, seed=1)
        with pytest.raises(ValidationError):
            ForcingSpec(density=density, tau=tau, noise=other, rule=ScalingRule.INVERSE_TIME)

    def test_closed_form_oracle_coarse(self, ou_potential):
        assert _oracle_error(ou_potential, 100, 50, seed=11) < 0.1

    @pytest.mark.slow
    def test_closed_form_oracle_refines(self, ou_potential):
        coarse = _oracle_error(ou_potential, 200, 100, seed=12)
        fine = _oracle_error(ou_potential, 400, 200, seed=12)
        assert fine <= 0.05
        assert fine <= coarse


class TestClosedForm:
    """v1_closed_form_ou."""

    def test_zero_at_origin_time(self, time_grid):
        noise = brownian_path(time_grid, 1, seed=2)
        x = np.linspace(-3, 3, 7)
        assert np.all(v1_closed_form_ou(1.0, noise, 0.0, x) == 0.0)

    def test_odd_and_linear_in_gamma(self, time_grid):
        noise = brownian_path(time_grid, 1, seed=2)
        x = np.linspace(-3, 3, 7)
        v = v1_closed_form_ou(1.0, noise, 0.4, x)
        assert np.allclose(v, -v[::-1])
        assert np.allclose(v1_closed_form_ou(2.5, noise, 0.4, x), 2.5 * v)

    def test_quad_points_validated(self, time_grid):
        with pytest.raises(ValueError):
            v1_closed_form_ou(1.0, brownian_path(time_grid, 1, seed=2), 0.4, [0.0], quad_points=0)


class TestCoupledForcing:
    """Noise built from estimator errors."""

    def test_values(self):
        trajectory = EstimatorTrajectory(estimates=[[0.1], [0.2]], scheme=SchemeTag.ONLINE_CUMULATIVE)
        path = coupled_forcing_from_estimates(trajectory, [0.0], m=4, delta=0.25)
        assert path.kind == NoiseKind.ESTIMATOR_COUPLED
        assert path.time_grid.nu == pytest.approx(0.25)
        assert np.allclose(path.values[:, 0], [0.0, 0.1, 0.2])

    def test_exact_estimates_give_zero(self):
        path = coupled_forcing_from_estimates(EstimatorTrajectory.constant([0.3], 5), [0.3], m=10, delta=0.1)
        assert np.all(path.values == 0.0)

    def test_step_must_match(self):
        trajectory = EstimatorTrajectory.constant([0.0], 4)
        with pytest.raises(ValueError):
            coupled_forcing_from_estimates(trajectory, [0.0], 4, 0.25, time_grid=TimeGrid(horizon=1.0, steps=2))

    def test_too_short(self):
        trajectory = EstimatorTrajectory.constant([0.0], 2)
        with pytest.raises(TrajectoryTooShort):
            coupled_forcing_from_estimates(trajectory, [0.0], 4, 0.25, time_grid=TimeGrid(horizon=0.75, steps=3))


class TestLongFormat:
    def test_rows_time_major(self, small_grid):
        tg = TimeGrid(horizon=1.0, steps=2)
        field = scaled_field(small_grid, tg, np.ones((3, small_grid.size)))
        rows = long_format_rows(field)
        assert len(rows) == 3 * small_grid.size
        assert rows[0] == (0.0, -5.0, 0.0)
        assert rows[1][0] == 0.0 and rows[small_grid.size][0] == pytest.approx(0.5)
