import numpy as np
import pytest

import riskcap as rc
from riskcap.freeboundary import SolverConfig


@pytest.fixture(scope="session")
def params():
    return rc.example_params()


@pytest.fixture(scope="session")
def derived(params):
    return rc.derive_constants(params)


@pytest.fixture(scope="session")
def solved(params):
    """Free-boundary solution at the baseline configuration, solved once."""
    return rc.solve_free_boundary(params, SolverConfig())


@pytest.fixture(scope="session")
def solved_half_L(params):
    p = rc.example_params(L=350_000.0)
    return p, rc.solve_free_boundary(p, SolverConfig())


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240901)
