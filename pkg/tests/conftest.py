import numpy as np
import pytest

from brwsource import channelizer as ch
from brwsource import mode_solver as ms
from brwsource import spdc_engine as se

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def stack():
    return ms.default_stack()


@pytest.fixture(scope="session")
def tables(stack):
    return ms.build_tables(stack)


@pytest.fixture(scope="session")
def pump_nm(tables):
    return ms.degenerate_pump_nm(tables)


@pytest.fixture(scope="session")
def amp(tables, pump_nm, stack):
    return se.biphoton_amplitude(tables, float(se.omega_from_nm(pump_nm)), stack.length_m)


@pytest.fixture(scope="session")
def grid(amp):
    return ch.ChannelGrid.for_amplitude(amp)


@pytest.fixture(scope="session")
def cmap(amp, grid):
    return ch.concurrence_map(amp, grid)


@pytest.fixture(scope="session")
def near_state(amp, grid):
    return ch.channel_pair_state(amp, grid, ch.pair_channels(grid, amp.omega_p)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
