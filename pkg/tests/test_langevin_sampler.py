"""
Tests for seeded streams and the Langevin sampler.
"""

import math

import numpy as np
import pytest

from src.statistical_jko.core.exceptions import Diverged
from src.statistical_jko.core.potential import build_potential
from src.statistical_jko.models.estimates import InitialLaw
from src.statistical_jko.services.langevin_sampler import (
    em_marginal_ensemble,
    ou_exact_moments,
    ou_marginal_ensemble,
    ou_transition,
    sample_batches,
    sample_em_path,
    sample_ou_path,
    sample_path,
)
from src.statistical_jko.services.random_streams import derive_seed, normalize_seed, substream


class TestRandomStreams:
    """Counter-based substreams."""

    def test_same_key_same_stream(self):
        a = substream(42, 3, 1).standard_normal(5)
        b = substream(42, 3, 1).standard_normal(5)
        assert np.array_equal(a, b)

    def test_distinct_keys_differ(self):
        a = substream(42, 0, 0).standard_normal(5)
        b = substream(42, 0, 1).standard_normal(5)
        c = substream(43, 0, 0).standard_normal(5)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_seed_validation(self):
        assert normalize_seed(2**64 - 1) == 2**64 - 1
        with pytest.raises(ValueError):
            normalize_seed(-1)

    def test_derive_seed_deterministic(self):
        assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)
        assert derive_seed(7, 1, 2) != derive_seed(7, 2, 1)


class TestOuFormulas:
    """Closed-form OU moments and transitions."""

    def test_moments(self):
        mu, var = ou_exact_moments(0.0, 1.0, 1.44, 0.5)
        assert mu == pytest.approx(math.exp(-0.5))
        assert var == pytest.approx(1.0 - (1.0 - 1.44) * math.exp(-1.0))

    def test_moments_with_beta(self):
        _, var = ou_exact_moments(0.0, 0.0, 0.0, 50.0, beta=4.0)
        assert var == pytest.approx(0.25)

    def test_scalar_transition(self):
        F, Q = ou_transition(np.eye(1), 0.3, 2.0)
        assert F[0, 0] == pytest.approx(math.exp(-0.3))
        assert Q[0, 0] == pytest.approx((1 - math.exp(-0.6)) / 2.0)

    def test_noiseless_transition(self):
        _, Q = ou_transition(np.eye(2), 0.3, math.inf)
        assert np.all(Q == 0.0)


class TestOuPaths:
    """Exact OU sampling."""

    def test_reproducible(self):
        a = sample_ou_path([0.0], 1.0, 1.0, 50, InitialLaw.stationary(), seed=9)
        b = sample_ou_path([0.0], 1.0, 1.0, 50, InitialLaw.stationary(), seed=9)
        assert np.array_equal(a.observations, b.observations)
        assert a.n == 50 and a.dim == 1
        assert a.times[-1] == pytest.approx(50.0)

    def test_noiseless_path_decays(self):
        path = sample_ou_path([1.0], math.inf, 0.5, 4, InitialLaw.point(3.0), seed=0)
        expected = 1.0 + 2.0 * np.exp(-0.5 * np.arange(1, 5))
        assert np.allclose(path.observations[:, 0], expected)

    def test_matrix_precision_path(self):
        A = np.array([[2.0, 0.5], [0.5, 1.0]])
        path = sample_ou_path([0.0, 0.0], 1.0, 0.2, 30, InitialLaw.point([1.0, -1.0]), seed=1, precision=A)
        assert path.observations.shape == (30, 2)

    def test_stationary_variance(self):
        path = sample_ou_path([0.0], 2.0, 5.0, 20000, InitialLaw.stationary(), seed=3)
        assert np.var(path.observations) == pytest.approx(0.5, rel=0.05)

    def test_ensemble_moments(self):
        initial = InitialLaw.gaussian([1.0], [[0.5]])
        draws = ou_marginal_ensemble([0.0], 1.0, 0.7, 40000, initial, seed=5)
        mu, var = ou_exact_moments(0.0, 1.0, 0.5, 0.7)
        assert np.mean(draws) == pytest.approx(float(mu), abs=0.03)
        assert np.var(draws) == pytest.approx(float(var), abs=0.03)


class TestEulerMaruyama:
    """Euler-Maruyama sampling for general potentials."""

    def test_em_ensemble_matches_ou(self, ou_potential):
        initial = InitialLaw.point(1.0)
        draws = em_marginal_ensemble(ou_potential, [0.0], 1.0, 0.5, 0.005, 40000, initial, seed=2)
        mu, var = ou_exact_moments(0.0, 1.0, 0.0, 0.5)
        assert np.mean(draws) == pytest.approx(float(mu), abs=0.03)
        assert np.var(draws) == pytest.approx(float(var), abs=0.03)

    def test_weak_error_shrinks_with_step(self, ou_potential):
        # from the stationary law EM has Var = v* + (1 - v*)(1 - dt)^(2n), v* = 1/(1 - dt/2)
        errors = []
        for dt in (0.2, 0.1, 0.05):
            draws = em_marginal_ensemble(ou_potential, [0.0], 1.0, 2.0, dt, 400_000, InitialLaw.stationary(), seed=8)
            errors.append(abs(float(np.mean(draws ** 2)) - 1.0))
        assert errors[0] > errors[1] > errors[2]
        assert errors[0] == pytest.approx(0.11, abs=0.02)
        assert errors[2] < 0.04

    def test_quartic_path(self):
        quartic = build_potential("quartic")
        path = sample_path(quartic, [0.5], 1.0, 0.5, 20, InitialLaw.stationary(), seed=4, substeps=20)
        assert path.observations.shape == (20, 1)
        assert np.all(np.isfinite(path.observations))

    def test_divergence_detected(self):
        quartic = build_potential("quartic")
        with pytest.raises(Diverged):
            sample_em_path(quartic, [0.0], 1.0, 1.0, 5, 1, InitialLaw.point(100.0), seed=0)

    def test_sample_path_dispatches_exact_ou(self, ou_potential):
        a = sample_path(ou_potential, [0.0], 1.0, 1.0, 10, InitialLaw.stationary(), seed=8)
        b = sample_ou_path([0.0], 1.0, 1.0, 10, InitialLaw.stationary(), seed=8, precision=np.eye(1))
        assert np.array_equal(a.observations, b.observations)


class TestBatches:
    """Independent batches for the online schemes."""

    def test_batches_use_distinct_substreams(self, ou_potential):
        batches = sample_batches(ou_potential, [0.0], 1.0, 1.0, 10, 5, InitialLaw.stationary(), seed=1)
        assert batches.k == 5 and batches.m == 10
        assert [b.key for b in batches.batches] == [[j, 0] for j in range(5)]
        assert not np.array_equal(batches.batches[0].observations, batches.batches[1].observations)
        assert batches.pooled(2).shape == (20, 1)

    def test_replications_differ(self, ou_potential):
        a = sample_batches(ou_potential, [0.0], 1.0, 1.0, 10, 2, InitialLaw.stationary(), seed=1, replication=0)
        b = sample_batches(ou_potential, [0.0], 1.0, 1.0, 10, 2, InitialLaw.stationary(), seed=1, replication=1)
        assert not np.array_equal(a.pooled(), b.pooled())
