import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DESK_FS = 6.25e6


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: full desk-scale pipeline criteria (slow)")


# acceptance criteria report one line each; collected here and echoed in the summary
_CRITERIA = []


@pytest.fixture(scope="session")
def criterion():
    def record(name: str, ok: bool, measured, target: str):
        line = f"{'PASS' if ok else 'FAIL'}  {name}: measured {measured}, target {target}"
        _CRITERIA.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
