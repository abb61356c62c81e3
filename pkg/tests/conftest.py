import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from spatialcv.landscape import GridSpec, simulate_landscape

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, message), filled in by the acceptance tests
ACCEPTANCE_LINES: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        passed, message = ACCEPTANCE_LINES[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {message}")


@pytest.fixture(scope="session")
def small_landscape():
    return simulate_landscape(GridSpec(12), seed=7)


@pytest.fixture(scope="session")
def grid50():
    return GridSpec(50)


def grid_coords(side):
    return GridSpec(side).coords


def brute_force_buffered(coords, assessment, buffer, tol=1e-9):
    """Double loop over (candidate, assessment) pairs."""
    assessment = set(int(i) for i in assessment)
    out = []
    for i in range(len(coords)):
        if i in assessment:
            continue
        for j in assessment:
            if np.hypot(*(coords[i] - coords[j])) <= buffer + tol:
                out.append(i)
                break
    return np.array(out, dtype=np.int64)
