import numpy as np
import pytest

from nvreg.dynamics import model_for
from nvreg.hamiltonian import SystemParams, diagonalize


@pytest.fixture(scope="session")
def params():
    return SystemParams()


@pytest.fixture(scope="session")
def eigsys(params):
    return diagonalize(params)


@pytest.fixture(scope="session")
def model(params):
    return model_for(params)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_density(rng, n=8, rank=None):
    rank = rank or n
    A = rng.normal(size=(n, rank)) + 1j * rng.normal(size=(n, rank))
    rho = A @ A.conj().T
    return rho / np.trace(rho).real


def random_hermitian(rng, n=8, scale=1.0):
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return scale * 0.5 * (A + A.conj().T)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
