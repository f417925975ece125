import pytest

from loadbench.clock import VirtualClock
from loadbench.sim import SimConfig, SimulatedSut
from loadbench.sut import InMemoryLibrary


def make_sim(**config):
    clock = VirtualClock()
    return SimulatedSut(SimConfig(**config), clock)


@pytest.fixture
def sim():
    return make_sim


@pytest.fixture
def lib():
    return InMemoryLibrary(1024)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
