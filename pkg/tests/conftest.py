import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from adaptive_control.dynamics import wind_tunnel
from adaptive_control.filtering import Prior

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def uniform_prior():
    return Prior.uniform(0.0, 1.0, 64)


@pytest.fixture(scope="session")
def model():
    return wind_tunnel()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
