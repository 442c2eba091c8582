import pytest

from netslice.config import preset
from netslice.model import ResourceCapacity, SliceClassSpec, SlicingProblem


def small_specs(rewards=(1, 2, 4)):
    lam = (12.0, 8.0, 10.0)
    return tuple(SliceClassSpec(c, lam[c], 3.0, float(rewards[c]), 100, 2, 1) for c in range(3))


SMALL_CAP = ResourceCapacity(400, 8, 4)


@pytest.fixture(scope="session")
def small():
    return preset("small").problem()


@pytest.fixture(scope="session")
def medium():
    return preset("medium").problem()


@pytest.fixture
def birth_death():
    """One class, room for exactly one slice: lambda=12, mu=3, r=1."""
    return SlicingProblem([SliceClassSpec(0, 12.0, 3.0, 1.0, 100, 2, 1)], ResourceCapacity(100, 2, 1))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
