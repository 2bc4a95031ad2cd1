from __future__ import annotations

import pytest

from stochosc.grids import GridSpec

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def small_grid() -> GridSpec:
    return GridSpec(n=32, dt=0.02)


@pytest.fixture(scope="session")
def grid48() -> GridSpec:
    return GridSpec(n=48, dt=0.02)


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
