import numpy as np
import pytest

from agnn.graph import from_edge_list

ACCEPTANCE_LINES: list[str] = []


def random_digraph(rng, n, p=0.2, self_loops=False):
    pairs = [(i, j) for i in range(n) for j in range(n)
             if (self_loops or i != j) and rng.random() < p]
    return from_edge_list(n, pairs)


def random_symmetric_graph(rng, n, p=0.25):
    pairs = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                pairs += [(i, j), (j, i)]
    return from_edge_list(n, pairs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
