import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from selfplay_ail.bandit import ContextDistribution, PolicyTable

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_WEIGHT = st.floats(1e-3, 1.0, allow_nan=False)


@st.composite
def tables(draw, max_x=3, max_y=5, min_y=2):
    """(n_x, n_y) shape plus two full-support policies and a context distribution."""
    n_x = draw(st.integers(1, max_x))
    n_y = draw(st.integers(min_y, max_y))
    a = draw(hnp.arrays(float, (n_x, n_y), elements=_WEIGHT))
    b = draw(hnp.arrays(float, (n_x, n_y), elements=_WEIGHT))
    r = draw(hnp.arrays(float, (n_x,), elements=st.floats(0.05, 1.0)))
    return PolicyTable.from_weights(a), PolicyTable.from_weights(b), ContextDistribution(r / r.sum())


@st.composite
def rewards_like(draw, shape, bound=3.0):
    return draw(hnp.arrays(float, shape, elements=st.floats(-bound, bound, allow_nan=False)))


def rho1():
    return ContextDistribution(np.array([1.0]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
