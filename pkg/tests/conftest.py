import numpy as np
import pytest

from pkdn import _backend
from pkdn.tensor import element_mode


@pytest.fixture
def f64():
    with element_mode("float64"):
        yield


@pytest.fixture(params=_backend.available)
def backend(request):
    prev = _backend.name
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
