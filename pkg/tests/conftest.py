import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("voxfed", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("voxfed")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance outcomes, one line per criterion, echoed at the end of the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
