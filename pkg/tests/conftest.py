import numpy as np
import pytest

from platerec import _kernels


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=["numba", "numpy"])
def kernel_backend(request):
    """Run a test once per kernel backend, restoring the previous choice."""
    if request.param == "numba" and not _kernels.NUMBA_AVAILABLE:
        pytest.skip("numba not importable")
    previous = _kernels.set_backend(request.param == "numba")
    yield request.param
    _kernels.set_backend(previous)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one 'PASS/FAIL criterion N: ...' line per acceptance criterion."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
