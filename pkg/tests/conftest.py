import pytest

from shearlayer.numerics import PhysicalGrid
from shearlayer.profile import make_profile

ACCEPTANCE = {}


@pytest.fixture(scope="session")
def couette():
    return make_profile("couette", ub=2.0)


@pytest.fixture(scope="session")
def bump():
    return make_profile("couette_plus_bump", alpha=0.1, n0=5, ub=2.0)


@pytest.fixture
def grid64():
    return PhysicalGrid(0.5, 64, 64)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
