import math

import pytest

from optoqubit.params import default_device

TWO_PI = 2 * math.pi


@pytest.fixture(scope="session")
def device():
    return default_device()


@pytest.fixture(scope="session")
def params(device):
    return device[0]


@pytest.fixture(scope="session")
def baths(device):
    return device[1]


@pytest.fixture(scope="session")
def lossless_qubit(params):
    """Qubit-cavity parameters with lifetimes long enough to ignore."""
    return params.replace(T1_qubit=1e3, T1_cavity=1e3, Tphi_qubit=1e3)


def pytest_terminal_summary(terminalreporter):
    from tests import acceptance_log

    if acceptance_log.RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(acceptance_log.RESULTS):
            terminalreporter.write_line(acceptance_log.RESULTS[key])
