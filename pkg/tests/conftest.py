import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from metdiff import instances as inst
from metdiff.mmspace import build_space

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

seeds = st.integers(min_value=0, max_value=2**32 - 1)


def rng_of(seed):
    return np.random.default_rng(seed)


@pytest.fixture
def x2():
    return build_space(["a", "b"], [[0, 1], [1, 0]], [1, 1], 1.0)


@pytest.fixture
def line3():
    return build_space(["a", "b", "c"], [[0, 1, 2], [1, 0, 1], [2, 1, 0]], [1, 1, 1], 1.0)


@pytest.fixture
def x2y2():
    return inst.two_point_example()


@pytest.fixture
def incompatible():
    return inst.incompatible_example()


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
