import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from defectrom.models import assemble, default_grid
from defectrom.timestepping import SolverConfig, solve_blackbox

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("repo")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running reproduction (tens of minutes)")


@pytest.fixture(scope="session")
def heat():
    return assemble("heat")


@pytest.fixture(scope="session")
def heat_grid():
    return default_grid("heat")


@pytest.fixture(scope="session")
def heat_blackbox(heat, heat_grid):
    return solve_blackbox(heat, heat_grid, SolverConfig(), np.array([0.06]))


@pytest.fixture(scope="session")
def small_burgers():
    return assemble("burgers", n_cells=60)


@pytest.fixture(scope="session")
def small_fhn():
    return assemble("fhn", n_cells=24)


# acceptance summary -----------------------------------------------------------

ACCEPTANCE_LINES: dict = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records a pass/fail line and asserts ``ok``."""

    def record(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.setdefault(n, []).append(line)
        print(line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[n]:
            terminalreporter.write_line(line)
