import numpy as np
import pytest

from cfslab import fixtures


@pytest.fixture(scope="session")
def ring():
    return fixtures.ring_fixture(m=6, kappa=0.05)


@pytest.fixture(scope="session")
def chain():
    return fixtures.chain_fixture(nn=8, kappa=0.05)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(2024)
