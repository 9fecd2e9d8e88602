"""
Shared pytest fixtures and configuration for rcmlab tests.
"""

import numpy as np
import pytest

from rcmlab.environment import (
    Bernoulli,
    ConductanceLaw,
    Constant,
    Environment,
    sample_environment,
)
from rcmlab.lattice import EdgeField, build_torus


def pytest_addoption(parser):
    parser.addoption(
        "--run-slow",
        action="store_true",
        default=False,
        help="Run full-size acceptance experiments",
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


def make_env(d, L, values, law=None):
    """Environment with explicit conductances (one per edge, edge = vertex * d + dir)."""
    lattice = build_torus(d, L)
    law = law or ConductanceLaw.isotropic(Constant(1.0), d)
    return Environment(lattice, EdgeField(lattice, np.asarray(values, dtype=float)), law)


@pytest.fixture
def line():
    """One-dimensional torus with four vertices."""
    return build_torus(1, 4)


@pytest.fixture
def unit_env_2d():
    """Homogeneous a = 1 environment on the 5x5 torus."""
    lattice = build_torus(2, 5)
    return sample_environment(ConductanceLaw.isotropic(Constant(1.0), 2), lattice, 0)


@pytest.fixture
def elliptic_law_2d():
    """Uniformly elliptic Bernoulli law in d = 2."""
    return ConductanceLaw.isotropic(Bernoulli(0.5, 0.2, 1.0), 2)


@pytest.fixture
def random_env_2d(elliptic_law_2d):
    """Random uniformly elliptic environment on the 8x8 torus."""
    return sample_environment(elliptic_law_2d, build_torus(2, 8), 12345)
