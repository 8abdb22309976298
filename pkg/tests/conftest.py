import numpy as np
import pytest

from fedgrid.data.series import TimeSeries
from fedgrid.data.synthetic import default_base_profile

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def month_base():
    """30 days of the default base profile starting 2021-06-01."""
    return default_base_profile(30, seed=3)


def make_series(values, start="2021-06-01T00:00", node="n0"):
    return TimeSeries(node, np.datetime64(start, "m"), np.asarray(values, dtype=float))
