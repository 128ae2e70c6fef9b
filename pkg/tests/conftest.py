import math
import sys

import numpy as np
import pytest

from leaftransfer.taskspace import sinusoid

TWO_PI = 2 * math.pi


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sin_task():
    return sinusoid(1.0, 1.0, 0.0, 0.0)


@pytest.fixture
def grid100():
    return np.linspace(0.0, TWO_PI, 100)


def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
