import numpy as np
import pytest

from evmarket.config import UtilityParams


@pytest.fixture
def eq1():
    return UtilityParams.with_waiting()


@pytest.fixture
def eq8():
    return UtilityParams.price_only()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None:
        return
    lines = mod.acceptance_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
