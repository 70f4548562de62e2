import math

import numpy as np
import pytest

from hsdrift.field_core import Grid, GridField


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long running numerical runs")


@pytest.fixture
def unit_grid():
    return Grid.box((-0.5, -0.5), (0.5, 0.5), 64, 2)


def field_of(grid, fn, **kw):
    return GridField(grid, fn(grid.coords()), **kw)


def rotated_ramp(grid, angle_from_down):
    """Ramp whose gradient makes ``angle_from_down`` with ``-e_2``."""
    nu = np.array([math.sin(angle_from_down), -math.cos(angle_from_down)])
    return GridField(grid, np.maximum(grid.coords() @ nu, 0.0))


# one line per acceptance criterion, filled by test_acceptance and printed at the end of the session
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE[key])
