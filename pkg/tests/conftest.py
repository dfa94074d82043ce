import os

import pytest
from hypothesis import HealthCheck, settings

from swarmforage.scenario import make_density_scenario, make_scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def ss_small():
    return make_scenario("SS", (16.0, 8.0), 10, 20, seed=1)


@pytest.fixture(scope="session")
def ds_small():
    return make_scenario("DS", (16.0, 8.0), 10, 20, seed=1)


@pytest.fixture(scope="session")
def ss_desk():
    return make_density_scenario("SS", 10, 0.01, seed=3)


ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion, then assert it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
