import pytest

from spikelab.grid import RadialGrid
from spikelab.ground_state import solve_ground_state
from spikelab.nlep import NlepProblem

ACCEPTANCE_LINES: list[str] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running numerical experiment")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gs1():
    return solve_ground_state(1)


@pytest.fixture(scope="session")
def gs2():
    return solve_ground_state(2)


@pytest.fixture(scope="session")
def nlep1():
    return NlepProblem.build(1)


@pytest.fixture(scope="session")
def nlep2():
    return NlepProblem.build(2)


@pytest.fixture(scope="session")
def small_grid2():
    return RadialGrid(2, 400, 12.0)
