import numpy as np
import pytest

from riskac.instances import random_mdp, random_policy_features
from riskac.mdp import TabularMdp


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def one_state():
    """r = 1, gamma = 0.5: V = 2, U = 4, no variance."""
    return TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.5, 0)


@pytest.fixture
def mdp5():
    return random_mdp(np.random.default_rng(5), 5, 3, gamma=0.9)


@pytest.fixture
def feats5(mdp5):
    return random_policy_features(np.random.default_rng(6), 5, 3, 6)


def symmetric_two_state():
    """Transitions ignore the action; reward 1 in state 1 only."""
    P = np.full((2, 2, 2), 0.5)
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    return TabularMdp(P, r, 0.9, 0)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and again in the terminal summary."""
    def emit(number, passed, text):
        line = f"CRITERION {number} {'PASS' if passed else 'FAIL'}: {text}"
        ACCEPTANCE_LINES.append((number, line))
        with capsys.disabled():
            print("\n" + line)
        return passed
    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
