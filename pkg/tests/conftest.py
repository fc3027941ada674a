from __future__ import annotations

import pytest

from patchflow.model import validate_scenario
from tests.helpers import load_reference


@pytest.fixture
def minimal_raw() -> dict:
    return load_reference("minimal")


@pytest.fixture
def minimal(minimal_raw):
    return validate_scenario(minimal_raw)


def pytest_terminal_summary(terminalreporter):
    from tests.helpers import ACCEPTANCE_RESULTS

    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
