import numpy as np
import pytest

from nonholo import zoo
from nonholo.compression import CompressedSystem
from nonholo.routh import apply_gauge


@pytest.fixture(scope="session")
def snake():
    return zoo.snakeboard()


@pytest.fixture(scope="session")
def ball():
    return zoo.chaplygin_ball()


@pytest.fixture(scope="session")
def se2():
    return zoo.se2_toy()


@pytest.fixture(scope="session")
def ball_gauged(ball):
    return apply_gauge(CompressedSystem(ball.system), ball.gauge, samples=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[k])
