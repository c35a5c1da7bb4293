import sys

import numpy as np
import pytest

from telobranch.model import Alive, BirthRate, ExponentialProbability, build_model1, build_model2


@pytest.fixture(scope="session")
def model2():
    """k=1, delta=1, Delta=100, q(y) = min(1, e^{-0.05 y}), b(a) = a."""
    return build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05))


@pytest.fixture(scope="session")
def model2_slow_q():
    """As model2 but q decays at rate 0.01, so traits well inside the return box keep a flat weight."""
    return build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.01))


@pytest.fixture(scope="session")
def model1():
    return build_model1(1, 1.0, 10.0, 0.1)


@pytest.fixture(scope="session")
def yule():
    """Constant rate 1 with telomeres far from senescence."""
    return build_model2(1, 1.0, 100.0, ExponentialProbability(1.0, 0.05), birth=BirthRate.constant(1.0))


@pytest.fixture(scope="session")
def far_init():
    return Alive(np.array([1e9, 1e9]), 0.0)



def pytest_terminal_summary(terminalreporter):
    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
