"""
Tests for field diagnostics and the sampled-mean variance study.
"""

import math

import numpy as np
import pytest

from src.statistical_jko.core.exceptions import ConfigError, GridMismatch
from src.statistical_jko.core.fokker_planck import analytic_ou_density_field
from src.statistical_jko.core.grid_core import gaussian_density, scaled_field
from src.statistical_jko.models.grids import Grid1D, TimeGrid
from src.statistical_jko.models.jko import JkoTrajectory, StepDiagnostics
from src.statistical_jko.models.study import IntegralMethod
from src.statistical_jko.services.diagnostics import (
    field_correlation,
    prop53_exact_variance,
    prop53_limit_variance,
    prop53_replicate,
    prop53_sweep,
    relative_l2_error,
    run_prop53,
    scaled_difference,
)


@pytest.fixture
def short_time():
    return TimeGrid(horizon=0.2, steps=4)


def _field(grid, time_grid, fn):
    x = grid.nodes
    rows = np.array([fn(t, x) for t in time_grid.nodes])
    return scaled_field(grid, time_grid, rows)


class TestScaledDifference:
    """V_hat = scale * (rho_hat - rho)."""

    def test_fields(self, small_grid, short_time):
        a = analytic_ou_density_field(0.0, 0.0, 1.44, 1.0, small_grid, short_time)
        b = analytic_ou_density_field(0.0, 0.0, 1.0, 1.0, small_grid, short_time)
        v = scaled_difference(a, b, 10.0)
        assert np.allclose(v.values, 10.0 * (a.values - b.values))
        assert np.all(scaled_difference(a, a, 10.0).values == 0.0)

    def test_jko_trajectory_sampled_on_reference_grid(self, small_grid):
        tg = TimeGrid(horizon=0.2, steps=2)
        iterates = [gaussian_density(small_grid, 0.0, v) for v in (1.44, 1.3, 1.2)]
        diag = [
            StepDiagnostics(step=k, inner_iterations=0, alpha_l1=0.0, w2_to_previous=0.0,
                            free_energy=0.0, free_energy_previous=0.0)
            for k in (1, 2)
        ]
        trajectory = JkoTrajectory(iterates=iterates, diagnostics=diag, delta=0.1)
        reference = analytic_ou_density_field(0.0, 0.0, 1.44, 1.0, small_grid, tg)
        v = scaled_difference(trajectory, reference, 1.0)
        assert np.allclose(v.values[2], iterates[2].values - reference.values[2])

    def test_grid_mismatch(self, small_grid, short_time):
        other = Grid1D(half_width=5.0, intervals=40)
        a = analytic_ou_density_field(0.0, 0.0, 1.0, 1.0, small_grid, short_time)
        b = analytic_ou_density_field(0.0, 0.0, 1.0, 1.0, other, short_time)
        with pytest.raises(GridMismatch):
            scaled_difference(a, b, 1.0)


class TestFieldMetrics:
    """Windowed relative error and correlation."""

    def test_relative_error_of_scaled_field(self, small_grid, short_time):
        ref = _field(small_grid, short_time, lambda t, x: t * x * np.exp(-x * x / 2))
        bigger = _field(small_grid, short_time, lambda t, x: 1.1 * t * x * np.exp(-x * x / 2))
        assert relative_l2_error(bigger, ref) == pytest.approx(0.1, rel=1e-10)
        assert relative_l2_error(ref, ref, t_min=0.1, x_max=3.0) == 0.0

    def test_correlation(self, small_grid, short_time):
        ref = _field(small_grid, short_time, lambda t, x: t * x * np.exp(-x * x / 2))
        assert field_correlation(ref, ref) == pytest.approx(1.0)
        flipped = _field(small_grid, short_time, lambda t, x: -2 * t * x * np.exp(-x * x / 2))
        assert field_correlation(flipped, ref) == pytest.approx(-1.0)

    def test_constant_field_has_zero_correlation(self, small_grid, short_time):
        ref = _field(small_grid, short_time, lambda t, x: t * x * np.exp(-x * x / 2))
        flat = _field(small_grid, short_time, lambda t, x: np.zeros_like(x))
        assert field_correlation(flat, ref) == 0.0

    def test_window_excludes_early_times(self, small_grid, short_time):
        ref = _field(small_grid, short_time, lambda t, x: (t + 1) * x * np.exp(-x * x / 2))
        early = ref.values.copy()
        early[0] *= 5.0
        noisy = scaled_field(small_grid, short_time, early)
        assert relative_l2_error(noisy, ref, t_min=0.05) == pytest.approx(0.0, abs=1e-14)
        assert relative_l2_error(noisy, ref) > 0.0


class TestSampledMeanVariance:
    """Closed form and Monte Carlo of the sampled-mean gap."""

    def test_limit_value(self):
        assert prop53_limit_variance(1.0) == pytest.approx(1 / 6 + (1 - math.exp(-2)) / 4)
        assert prop53_limit_variance(1.0) == pytest.approx(0.382833, abs=1e-6)
        assert prop53_limit_variance(1.0, beta=2.0) == pytest.approx(0.382833 / 2, abs=1e-6)

    def test_exact_variance_approaches_limit(self):
        limit = prop53_limit_variance(1.0)
        gaps = [abs(prop53_exact_variance(1.0, 1.0 / n) - limit) for n in (10, 100, 1000)]
        assert gaps[2] < gaps[0]
        assert gaps[2] < 1e-2

    def test_exact_variance_validates(self):
        with pytest.raises(ValueError):
            prop53_exact_variance(0.0, 0.1)

    @pytest.mark.parametrize("integral", [IntegralMethod.TRAPEZOID, IntegralMethod.EXACT])
    def test_monte_carlo_matches_closed_form(self, integral):
        row = prop53_replicate(1.0, 0.1, 4000, seed=13, integral=integral, refine=50)
        assert row.samples == 10
        assert row.replications == 4000
        assert abs(row.variance - row.exact_variance) <= 5 * row.std_error

    def test_trapezoid_needs_dividing_step(self):
        with pytest.raises(ConfigError):
            prop53_replicate(1.0, 0.3, 10, seed=1)

    def test_exact_sampler_handles_non_dividing_step(self):
        row = prop53_replicate(1.0, 0.3, 4000, seed=14, integral=IntegralMethod.EXACT)
        assert row.samples == 4
        assert abs(row.variance - row.exact_variance) <= 5 * row.std_error

    def test_needs_two_replications(self):
        with pytest.raises(ValueError):
            prop53_replicate(1.0, 0.1, 1, seed=1)

    def test_run_over_n_list(self):
        rows = run_prop53(1.0, [5, 10], 50, seed=3, refine=10)
        assert [r.samples for r in rows] == [5, 10]
        assert all(r.limit_variance == pytest.approx(0.382833, abs=1e-6) for r in rows)

    def test_closed_form_sweep(self):
        rows = prop53_sweep(1.0, 0.01, [1, 2, 3])
        assert [r.delta for r in rows] == pytest.approx([0.01, 0.02, 0.03])
        assert all(r.std_error == 0.0 and r.variance == r.exact_variance for r in rows)
        assert rows[2].samples == 34

    def test_monte_carlo_sweep(self):
        rows = prop53_sweep(1.0, 0.1, [1, 2], replications=100, seed=2)
        assert all(r.replications == 100 for r in rows)
        assert all(r.method == IntegralMethod.EXACT for r in rows)
