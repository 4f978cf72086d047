"""
Tests for proximal JKO steps and outer iterations.
"""

import math

import numpy as np
import pytest

from src.statistical_jko.core.exceptions import GridMismatch, InnerStall, TrajectoryTooShort
from src.statistical_jko.core.fokker_planck import analytic_ou_density_field
from src.statistical_jko.core.grid_core import gaussian_density, l1_distance, variance
from src.statistical_jko.core.jko_solver import (
    alpha_field,
    free_energy_under,
    jko_step,
    run_offline,
    run_online,
    run_plain,
)
from src.statistical_jko.core.potential import FrozenPotential, gibbs_density
from src.statistical_jko.models.estimates import EstimatorTrajectory, SchemeTag, ThetaEstimate
from src.statistical_jko.models.grids import Grid1D, Interpolation, TimeGrid
from src.statistical_jko.models.jko import InnerConfig, JkoConfig, JkoTrajectory, StepDiagnostics


@pytest.fixture
def jko_grid():
    return Grid1D(half_width=5.0, intervals=40)


@pytest.fixture
def quick_cfg(jko_grid):
    return JkoConfig(delta=0.01, beta=1.0, grid=jko_grid, inner=InnerConfig(l_max=20))


@pytest.fixture
def nesterov_cfg(grid):
    return JkoConfig(delta=0.01, grid=grid, inner=InnerConfig(nesterov=True))


def _diag(step):
    return StepDiagnostics(
        step=step, inner_iterations=0, alpha_l1=0.0, w2_to_previous=0.0,
        free_energy=0.0, free_energy_previous=0.0,
    )


class TestAlphaField:
    """First-order residual of the proximal step."""

    def test_stationary_density_is_nearly_critical(self, grid, ou_potential):
        gibbs = gibbs_density(ou_potential, [0.0], 1.0, grid)
        alpha = alpha_field(gibbs, gibbs, FrozenPotential(ou_potential, [0.0]), 0.01, 1.0)
        assert alpha[0] == 0.0 and alpha[-1] == 0.0
        assert grid.h * np.sum(np.abs(alpha)) < 1e-4

    def test_noiseless_residual_is_drift_flux(self, grid, ou_potential):
        rho = gaussian_density(grid, 0.0, 1.0)
        alpha = alpha_field(rho, rho, FrozenPotential(ou_potential, [0.0]), 0.01, math.inf)
        assert np.allclose(alpha[1:-1], 0.01 * grid.nodes[1:-1] * rho.values[1:-1])

    def test_grid_mismatch(self, grid, jko_grid, ou_potential):
        with pytest.raises(GridMismatch):
            alpha_field(
                gaussian_density(grid, 0.0, 1.0), gaussian_density(jko_grid, 0.0, 1.0),
                FrozenPotential(ou_potential, [0.0]), 0.01, 1.0,
            )


class TestJkoStep:
    """One proximal step."""

    def test_stationary_density_is_fixed(self, grid, ou_potential):
        gibbs = gibbs_density(ou_potential, [0.0], 1.0, grid)
        cfg = JkoConfig(delta=0.01, grid=grid)
        result = jko_step(gibbs, FrozenPotential(ou_potential, [0.0]), cfg)
        assert result.inner_iterations == 0
        assert np.array_equal(result.density.values, gibbs.values)

    def test_step_keeps_unit_mass(self, jko_grid, quick_cfg, ou_potential):
        rho0 = gaussian_density(jko_grid, 0.0, 1.44)
        result = jko_step(rho0, FrozenPotential(ou_potential, [0.0]), quick_cfg)
        assert result.density.mass() == pytest.approx(1.0, abs=1e-12)
        assert result.inner_iterations <= 20
        assert np.all(result.density.values >= 0.0)

    def test_strict_inner_raises(self, jko_grid, ou_potential):
        cfg = JkoConfig(delta=0.01, grid=jko_grid, inner=InnerConfig(l_max=1, kappa=1e-12, strict_inner=True))
        with pytest.raises(InnerStall):
            jko_step(gaussian_density(jko_grid, 1.0, 1.44), FrozenPotential(ou_potential, [0.0]), cfg)

    def test_stall_without_strict_is_flagged(self, jko_grid, ou_potential):
        cfg = JkoConfig(delta=0.01, grid=jko_grid, inner=InnerConfig(l_max=1, kappa=1e-12))
        result = jko_step(gaussian_density(jko_grid, 1.0, 1.44), FrozenPotential(ou_potential, [0.0]), cfg)
        assert result.stalled

    def test_free_energy_under(self, grid, ou_potential):
        drift = FrozenPotential(ou_potential, [0.0])
        gibbs = gibbs_density(ou_potential, [0.0], 1.0, grid)
        wide = gaussian_density(grid, 0.0, 1.44)
        assert free_energy_under(drift, gibbs, 1.0) < free_energy_under(drift, wide, 1.0)
        assert free_energy_under(drift, wide, math.inf) == pytest.approx(0.72, abs=2e-3)


class TestOuterIteration:
    """run_plain, run_offline and run_online."""

    def test_plain_run_shape(self, jko_grid, quick_cfg, ou_potential):
        rho0 = gaussian_density(jko_grid, 0.0, 1.44)
        seen = []
        trajectory = run_plain(rho0, ou_potential, [0.0], quick_cfg, 0.03, on_step=seen.append)
        assert trajectory.steps == 3
        assert [d.step for d in seen] == [1, 2, 3]
        assert all(d.w2_to_previous >= 0.0 for d in trajectory.diagnostics)
        assert trajectory.w2_sum() == pytest.approx(sum(d.w2_to_previous for d in seen))

    def test_horizon_rounds_up(self, jko_grid, quick_cfg, ou_potential):
        rho0 = gaussian_density(jko_grid, 0.0, 1.44)
        assert run_plain(rho0, ou_potential, [0.0], quick_cfg, 0.025).steps == 3

    def test_constant_online_equals_offline(self, jko_grid, quick_cfg, ou_potential):
        rho0 = gaussian_density(jko_grid, 0.0, 1.44)
        estimate = ThetaEstimate(theta_hat=[0.2], n_used=10)
        offline = run_offline(rho0, ou_potential, estimate, quick_cfg, 0.02)
        online = run_online(rho0, ou_potential, EstimatorTrajectory.constant([0.2], 2), quick_cfg, 0.02)
        for a, b in zip(offline.iterates, online.iterates):
            assert np.array_equal(a.values, b.values)

    def test_online_needs_enough_estimates(self, jko_grid, quick_cfg, ou_potential):
        rho0 = gaussian_density(jko_grid, 0.0, 1.44)
        with pytest.raises(TrajectoryTooShort):
            run_online(rho0, ou_potential, EstimatorTrajectory.constant([0.0], 2), quick_cfg, 0.05)

    def test_online_uses_step_estimates(self, jko_grid, quick_cfg, ou_potential):
        rho0 = gaussian_density(jko_grid, 0.0, 1.44)
        trajectory = EstimatorTrajectory(estimates=[[0.0], [0.5]], scheme=SchemeTag.PER_BATCH)
        online = run_online(rho0, ou_potential, trajectory, quick_cfg, 0.02)
        plain = run_plain(rho0, ou_potential, [0.0], quick_cfg, 0.01)
        assert np.array_equal(online.iterates[1].values, plain.iterates[1].values)

    @pytest.mark.slow
    def test_variance_follows_ou(self, ou_potential):
        grid = Grid1D(half_width=5.0, intervals=200)
        cfg = JkoConfig(delta=0.01, grid=grid)
        trajectory = run_plain(gaussian_density(grid, 0.0, 1.44), ou_potential, [0.0], cfg, 0.1)
        expected = 1.0 + 0.44 * math.exp(-0.2)
        assert variance(trajectory.final) == pytest.approx(expected, abs=0.02)


class TestNesterov:
    """Momentum-accelerated flux descent."""

    def test_step_converges(self, grid, nesterov_cfg, ou_potential):
        rho0 = gaussian_density(grid, 0.0, 1.44)
        result = jko_step(rho0, FrozenPotential(ou_potential, [0.0]), nesterov_cfg)
        assert not result.stalled
        assert result.alpha_l1 < nesterov_cfg.inner.kappa
        assert result.inner_iterations < nesterov_cfg.inner.l_max
        assert result.density.mass() == pytest.approx(1.0, abs=1e-12)

    def test_one_step_variance(self, grid, nesterov_cfg, ou_potential):
        rho0 = gaussian_density(grid, 0.0, 1.44)
        result = jko_step(rho0, FrozenPotential(ou_potential, [0.0]), nesterov_cfg)
        expected = 1.0 + 0.44 * math.exp(-0.02)
        assert variance(result.density) == pytest.approx(expected, abs=1e-3)


class TestDescentInvariants:
    """Energy decrease and the proximal inequality along a run."""

    def test_free_energy_nonincreasing(self, grid, nesterov_cfg, ou_potential):
        rho0 = gaussian_density(grid, 0.0, 1.44)
        trajectory = run_plain(rho0, ou_potential, [0.0], nesterov_cfg, 0.05)
        for d in trajectory.diagnostics:
            assert d.free_energy <= d.free_energy_previous + 1e-7

    def test_proximal_inequality(self, grid, nesterov_cfg, ou_potential):
        rho0 = gaussian_density(grid, 0.0, 1.44)
        trajectory = run_plain(rho0, ou_potential, [0.0], nesterov_cfg, 0.05)
        for d in trajectory.diagnostics:
            assert 0.5 * d.w2_to_previous <= nesterov_cfg.delta * (d.free_energy_previous - d.free_energy) + 1e-7

    def test_w2_sum_is_order_delta(self, grid, ou_potential):
        rho0 = gaussian_density(grid, 0.0, 1.44)
        sums = []
        for delta in (0.02, 0.01):
            cfg = JkoConfig(delta=delta, grid=grid, inner=InnerConfig(nesterov=True))
            sums.append(run_plain(rho0, ou_potential, [0.0], cfg, 0.1).w2_sum())
        assert 1.6 <= sums[0] / sums[1] <= 2.6

    @pytest.mark.slow
    def test_reference_run(self, grid, ou_potential):
        rho0 = gaussian_density(grid, 0.0, 1.44)
        runs = {}
        for delta in (0.02, 0.01):
            cfg = JkoConfig(delta=delta, grid=grid)
            runs[delta] = run_plain(rho0, ou_potential, [0.0], cfg, 0.5)
        assert 1.6 <= runs[0.02].w2_sum() / runs[0.01].w2_sum() <= 2.4
        for d in runs[0.01].diagnostics:
            assert d.free_energy <= d.free_energy_previous + 1e-7
            assert 0.5 * d.w2_to_previous <= 0.01 * (d.free_energy_previous - d.free_energy) + 1e-7

    @pytest.mark.slow
    def test_one_step_variance_plain(self, grid, ou_potential):
        cfg = JkoConfig(delta=0.01, grid=grid)
        result = jko_step(gaussian_density(grid, 0.0, 1.44), FrozenPotential(ou_potential, [0.0]), cfg)
        assert variance(result.density) == pytest.approx(1.0 + 0.44 * math.exp(-0.02), abs=1e-3)

    @pytest.mark.slow
    def test_final_density_matches_ou_law(self, grid, ou_potential):
        cfg = JkoConfig(delta=0.01, grid=grid)
        trajectory = run_plain(gaussian_density(grid, 0.0, 1.44), ou_potential, [0.0], cfg, 0.5)
        time_grid = TimeGrid(horizon=0.5, steps=50)
        analytic = analytic_ou_density_field(0.0, 0.0, 1.44, 1.0, grid, time_grid)
        assert l1_distance(trajectory.final, analytic.density_at(50)) <= 0.05


class TestTrajectoryModel:
    """Piecewise-constant interpolation of iterates."""

    def test_density_at_conventions(self, jko_grid):
        iterates = [gaussian_density(jko_grid, 0.0, v) for v in (1.0, 1.2, 1.4)]
        trajectory = JkoTrajectory(iterates=iterates, diagnostics=[_diag(1), _diag(2)], delta=0.1)
        assert np.array_equal(trajectory.density_at(0.15).values, iterates[2].values)
        assert np.array_equal(trajectory.density_at(0.15, Interpolation.FLOOR).values, iterates[1].values)
        assert np.array_equal(trajectory.density_at(0.1).values, iterates[1].values)
        assert np.array_equal(trajectory.density_at(5.0).values, iterates[2].values)

    def test_to_field(self, jko_grid):
        iterates = [gaussian_density(jko_grid, 0.0, v) for v in (1.0, 1.2)]
        trajectory = JkoTrajectory(iterates=iterates, diagnostics=[_diag(1)], delta=0.1)
        field = trajectory.to_field(TimeGrid(horizon=0.1, steps=2))
        assert np.array_equal(field.row(0), iterates[0].values)
        assert np.array_equal(field.row(1), iterates[1].values)

    def test_diagnostics_count_checked(self, jko_grid):
        with pytest.raises(ValueError):
            JkoTrajectory(iterates=[gaussian_density(jko_grid, 0.0, 1.0)], diagnostics=[_diag(1)], delta=0.1)
