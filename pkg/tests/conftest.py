import numpy as np
import pytest

from rlloop.core import SliceConfig


@pytest.fixture
def cfg():
    return SliceConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, collected by test_acceptance and echoed
# in the terminal summary so it shows up even with output capture on.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
