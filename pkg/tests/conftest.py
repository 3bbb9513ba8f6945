import itertools

import numpy as np
import pytest

from noisyor_um.network import NoisyOrNetwork, generate_random_network, load_canonical_network


@pytest.fixture(scope="session")
def canonical():
    return load_canonical_network()


@pytest.fixture
def small_net():
    """2 risk factors, 2 diseases, 2 symptoms, random sparse edges."""
    return generate_random_network(11, (2, 2, 2), 0.6)


@pytest.fixture
def full_222():
    return generate_random_network(3, (2, 2, 2), 1.0)


def tiny_network(prior=0.5, leak=0.5, weight=0.5, validate=True):
    """(1,1,1) chain RF0 -> D0 -> S0 with shared parameter values."""
    return NoisyOrNetwork.create([prior], [leak], [(0, 0, weight)], [leak], [(0, 0, weight)], validate=validate)


def all_states(n):
    return np.array(list(itertools.product([0, 1], repeat=n)), dtype=np.int8)


# one "criterion N PASS/FAIL: detail" line per acceptance criterion, echoed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
