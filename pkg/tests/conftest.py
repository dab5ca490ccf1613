import numpy as np
import pytest

from asyncnet.config import load_fixture

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def ring3():
    return load_fixture("ring3_bernoulli")


@pytest.fixture(scope="session")
def ring3_beta():
    return load_fixture("ring3_beta")


@pytest.fixture(scope="session")
def unstable():
    return load_fixture("unstable_large_step")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
