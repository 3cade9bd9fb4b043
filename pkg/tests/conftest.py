import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mirrormark.rng import SecretKey

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture
def key():
    return SecretKey(bytes(range(16)))


@pytest.fixture
def other_key():
    return SecretKey(bytes(range(1, 17)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
