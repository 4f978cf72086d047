"""
Shared fixtures and the `slow` marker.

Acceptance-scale checks are marked `slow` and only run with --runslow; the
default run exercises the same code paths on smaller grids.
"""

import os

import pytest

from src.statistical_jko.config.settings import reset_settings
from src.statistical_jko.core.grid_core import gaussian_density
from src.statistical_jko.core.potential import build_potential
from src.statistical_jko.models.grids import Grid1D, TimeGrid


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale checks, run with --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Every test sees default settings, unaffected by the caller's WGF_* variables."""
    for key in list(os.environ):
        if key.startswith("WGF_"):
            monkeypatch.delenv(key, raising=False)
    reset_settings()
    yield
    reset_settings()


@pytest.fixture
def grid():
    """Reference spatial grid D=5, J=200."""
    return Grid1D(half_width=5.0, intervals=200)


@pytest.fixture
def small_grid():
    return Grid1D(half_width=5.0, intervals=60)


@pytest.fixture
def time_grid():
    """Reference time grid T=0.5, I=50."""
    return TimeGrid(horizon=0.5, steps=50)


@pytest.fixture
def ou_potential():
    return build_potential("quadratic")


@pytest.fixture
def rho0(grid):
    """N(0, 1.44) on the reference grid."""
    return gaussian_density(grid, 0.0, 1.44)
