import numpy as np
import pytest

from rlflab.space import generate_weights, graph_space, torus_space


@pytest.fixture
def two_state():
    return graph_space(np.array([[0.0, 1.0], [1.0, 0.0]]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_graph():
    W = generate_weights("random", 12, seed=3)
    m = np.random.default_rng(4).uniform(0.5, 1.5, 12)
    return graph_space(W, m)


@pytest.fixture(scope="session")
def torus64():
    return torus_space(64, 1)


@pytest.fixture(scope="session")
def torus2d():
    return torus_space(32, 2)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
