import numpy as np
import pytest

from rrjdetect.channel import NetworkTopology
from rrjdetect.config import load_scenario
from rrjdetect.ldp import JammerFamily

# Acceptance verdicts collected by tests/test_acceptance.py, printed at the end.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}

LAM, GAMMA = 0.5, 1.0


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def m4():
    return load_scenario("m4")


@pytest.fixture(scope="session")
def m6():
    return load_scenario("m6")


@pytest.fixture(scope="session")
def topo2():
    return NetworkTopology(positions=[(-38, 0), (38, 0)])


@pytest.fixture(scope="session")
def topo3():
    """Station 1 at different distances from 2 and 3; no hidden pairs."""
    return NetworkTopology(positions=[(0, 0), (30, 0), (0, 60)])


@pytest.fixture(scope="session")
def family4(m4):
    return JammerFamily(m4.topology, m4.lam, m4.gamma)


@pytest.fixture(scope="session")
def family6(m6):
    return JammerFamily(m6.topology, m6.lam, m6.gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
