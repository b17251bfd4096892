from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fracom.grid import GridFn, TimeGrid

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def smooth_velocity(grid: TimeGrid, coefs, offset: float = 0.0) -> GridFn:
    """offset + sum_k a_k sin((k+1) pi t) / (k+1): a smooth random velocity profile."""
    t = grid.t
    vals = offset + sum(a * np.sin((k + 1) * np.pi * t) / (k + 1) for k, a in enumerate(coefs))
    return GridFn(grid, vals)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
ACCEPTANCE_COUNT = 12


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, ACCEPTANCE_COUNT + 1):
        if k in ACCEPTANCE:
            ok, detail = ACCEPTANCE[k]
            terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {k:2d}: NOT RUN (deselected by the marker expression)")
