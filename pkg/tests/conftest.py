import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chainkit.model import CONTINUOUS, DISCRETE, from_matrix

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def random_stochastic(rng, n, density=0.5):
    """Random row-stochastic matrix; every row gets at least one positive entry."""
    P = rng.random((n, n)) * (rng.random((n, n)) < density)
    for i in range(n):
        if P[i].sum() == 0:
            P[i, rng.integers(n)] = 1.0
    return P / P.sum(axis=1, keepdims=True)


def random_generator(rng, n, density=0.6, irreducible=True):
    Q = rng.random((n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(Q, 0.0)
    if irreducible:
        for i in range(n):
            Q[i, (i + 1) % n] += rng.random() + 0.1
    return Q


def dt_model(P, gamma=None):
    return from_matrix(P.tolist(), DISCRETE, gamma=gamma)


def ct_model(Q, gamma=None):
    return from_matrix(Q.tolist(), CONTINUOUS, gamma=gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
