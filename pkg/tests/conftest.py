import os

import pytest
from hypothesis import HealthCheck, settings

from helpers import brownian2d, coupled_model, death_model

settings.register_profile("spalf", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("spalf")


@pytest.fixture
def death():
    return death_model()


@pytest.fixture
def coupled():
    return coupled_model()


@pytest.fixture
def bm2():
    return brownian2d()


def pytest_report_header(config):
    return f"SPALF_BACKEND={os.environ.get('SPALF_BACKEND', 'numba (default)')}"


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[number])
