from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dualstop.models import BermudanCallModel, StylizedModel, simulate, stylized_tree  # noqa: E402
from dualstop.snell import snell_for  # noqa: E402

PA1 = BermudanCallModel(2.0, 0.04, 2.0, 2.5)
PA2 = BermudanCallModel(2.0, 1.0 / 3.0, 2.0, 3.0)


@pytest.fixture(scope="session")
def stylized_paths():
    paths = simulate(StylizedModel(), 10_000, seed=11)
    return paths, snell_for(paths)


@pytest.fixture(scope="session")
def pa1_paths():
    paths = simulate(PA1, 10_000, seed=5)
    return paths, snell_for(paths)


@pytest.fixture(scope="session")
def two_point():
    return stylized_tree((0.5, 1.5))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance report")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
