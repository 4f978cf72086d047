"""
Tests for parametric potentials, drifts and the tau field.
"""

import math

import numpy as np
import pytest

from src.statistical_jko.core.exceptions import ConfigError, TrajectoryTooShort
from src.statistical_jko.core.grid_core import variance
from src.statistical_jko.core.potential import (
    AveragedPotential,
    FrozenPotential,
    TauField,
    build_potential,
    estimated_drift,
    gibbs_density,
    ou_gamma,
    symmetric_psd_sqrt,
)
from src.statistical_jko.models.estimates import EstimatorTrajectory, SchemeTag


def _finite_difference(fn, x, eps=1e-6):
    x = np.asarray(x, dtype=float)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = eps
        out.append((fn(x + e) - fn(x - e)) / (2 * eps))
    return np.array(out)


class TestRegistry:
    """build_potential."""

    def test_known_ids(self):
        assert build_potential("quadratic").name == "quadratic"
        assert build_potential("quartic", {"dim": 2}).dim_x == 2
        p = build_potential("quadratic_matrix", {"matrix": [[2.0, 0.5], [0.5, 1.0]]})
        assert p.is_quadratic and p.dim_theta == 2

    def test_unknown_id(self):
        with pytest.raises(ConfigError):
            build_potential("cubic")

    def test_missing_matrix(self):
        with pytest.raises(ConfigError):
            build_potential("quadratic_matrix")

    def test_indefinite_matrix(self):
        with pytest.raises(ConfigError):
            build_potential("quadratic_matrix", {"matrix": [[1.0, 0.0], [0.0, -1.0]]})


class TestDerivatives:
    """Analytic derivatives agree with central differences."""

    @pytest.mark.parametrize("pid,params", [
        ("quadratic", {"dim": 2}),
        ("quartic", {"dim": 2}),
        ("quadratic_matrix", {"matrix": [[2.0, 0.5], [0.5, 1.0]]}),
    ])
    def test_gradients(self, pid, params):
        p = build_potential(pid, params)
        theta = np.array([0.3, -0.2])
        x = np.array([0.7, 1.1])
        fd_x = _finite_difference(lambda y: p.psi(theta, y), x)
        fd_theta = _finite_difference(lambda t: p.psi(t, x), theta)
        assert np.allclose(p.grad_x(theta, x), fd_x, atol=1e-6)
        assert np.allclose(p.grad_theta_psi(theta, x), fd_theta, atol=1e-6)
        mixed = p.grad_theta_grad_x(theta, x[None, :])[0]
        fd_mixed = np.column_stack([
            (p.grad_x(theta + e, x) - p.grad_x(theta - e, x)) / 2e-6 for e in 1e-6 * np.eye(2)
        ])
        assert np.allclose(mixed, fd_mixed, atol=1e-5)

    def test_quartic_is_not_quadratic(self):
        assert not build_potential("quartic").is_quadratic
        assert build_potential("quartic").precision is None


class TestDrifts:
    """Frozen and averaged drifts."""

    def test_frozen_gradient_on_grid(self, small_grid, ou_potential):
        drift = FrozenPotential(ou_potential, [0.5])
        assert np.allclose(drift.gradient_on(small_grid), small_grid.nodes - 0.5)

    def test_averaged_matches_mean_theta_for_quadratic(self, small_grid, ou_potential):
        averaged = AveragedPotential(ou_potential, [0.2, 0.4, 0.9])
        assert np.allclose(averaged.gradient_on(small_grid), small_grid.nodes - 0.5)

    def test_estimated_drift_schemes(self, small_grid, ou_potential):
        trajectory = EstimatorTrajectory(estimates=[[0.2], [0.4], [0.9]], scheme=SchemeTag.PER_BATCH)
        frozen = estimated_drift(ou_potential, trajectory, SchemeTag.PER_BATCH, 2)
        assert np.allclose(frozen.gradient_on(small_grid), small_grid.nodes - 0.4)
        averaged = estimated_drift(ou_potential, trajectory, SchemeTag.AVERAGED_PSI, 2)
        assert np.allclose(averaged.gradient_on(small_grid), small_grid.nodes - 0.3)

    def test_estimated_drift_too_short(self, ou_potential):
        trajectory = EstimatorTrajectory(estimates=[[0.2]], scheme=SchemeTag.PER_BATCH)
        with pytest.raises(TrajectoryTooShort):
            estimated_drift(ou_potential, trajectory, SchemeTag.PER_BATCH, 2)


class TestGibbsAndGamma:
    """Gibbs densities and CLT scales."""

    def test_gibbs_of_ou_is_gaussian(self, grid, ou_potential):
        rho = gibbs_density(ou_potential, [0.0], 2.0, grid)
        assert rho.mass() == pytest.approx(1.0)
        assert variance(rho) == pytest.approx(0.5, abs=1e-3)

    def test_ou_gamma_formula(self):
        gamma = ou_gamma(1.0)
        expected = math.sqrt((1 + math.exp(-1)) / (1 - math.exp(-1)))
        assert gamma.shape == (1, 1)
        assert gamma[0, 0] == pytest.approx(expected)
        assert np.allclose(ou_gamma(1.0, 2.0, 3), expected / math.sqrt(2.0) * np.eye(3))

    def test_ou_gamma_rejects_nonpositive_eta(self):
        with pytest.raises(ValueError):
            ou_gamma(0.0)

    def test_symmetric_psd_sqrt(self):
        M = np.array([[4.0, 1.0], [1.0, 3.0]])
        root = symmetric_psd_sqrt(M)
        assert np.allclose(root, root.T)
        assert np.allclose(root @ root, M)


class TestTauField:
    """tau = grad_theta Psi' gamma."""

    def test_identity_field_for_ou(self, small_grid, ou_potential):
        tau = TauField.identity(ou_potential, [0.0])
        x = small_grid.nodes[:, None]
        assert np.allclose(tau.tau(x)[:, 0], -small_grid.nodes)
        assert np.allclose(tau.grad_tau(x), -1.0)
        assert np.allclose(tau.forcing_direction_on(small_grid, [0.5]), -0.5)

    def test_from_gamma_squared(self, ou_potential):
        tau = TauField.from_gamma_squared(ou_potential, [0.0], [[4.0]])
        assert tau.gamma[0, 0] == pytest.approx(2.0)

    def test_gamma_shape_checked(self, ou_potential):
        with pytest.raises(ValueError):
            TauField.from_gamma(ou_potential, [0.0], np.eye(2))
