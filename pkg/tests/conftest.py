import numpy as np
import pytest

from netgof.graph_core import Network


def random_network(n, p=0.3, d=0, seed=0):
    rng = np.random.default_rng(seed)
    Y = np.triu(rng.random((n, n)) < p, 1).astype(float)
    Y = Y + Y.T
    x = rng.standard_normal((n, d))
    X = np.abs(x[:, None, :] - x[None, :, :])
    return Network(Y, X)


@pytest.fixture
def small_net():
    return random_network(12, 0.35, d=2, seed=3)


@pytest.fixture
def tiny_net():
    return random_network(5, 0.5, d=1, seed=11)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
