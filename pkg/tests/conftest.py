import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from vvcache.content import LibraryConfig
from vvcache.delivery import DelayConfig

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def cfg():
    return LibraryConfig()


@pytest.fixture
def delay():
    return DelayConfig()


@pytest.fixture
def small_cfg():
    """20 videos, 5 GOPs, default tiling."""
    return LibraryConfig(num_videos=20, num_gops=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
