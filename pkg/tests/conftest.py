import sys
from importlib import resources

import numpy as np
import pytest

from adaptest.ingest import CostVector, OutcomeMatrix


def make_matrix(Y, board_fail=None, abort_only=None):
    Y = np.asarray(Y, dtype=np.uint8)
    n, m = Y.shape
    if board_fail is None:
        board_fail = (Y == 0).any(axis=1)
    if abort_only is None:
        abort_only = np.zeros(n, dtype=bool)
    return OutcomeMatrix([f"u{k}" for k in range(n)], [f"t{i + 1}" for i in range(m)], Y, board_fail, abort_only)


def random_instance(rng, max_units=200, max_diag=12, extra_steps=3):
    """Random outcome matrix with at most ``max_diag`` diagnostic steps."""
    n = int(rng.integers(1, max_units + 1))
    k = int(rng.integers(1, max_diag + 1))
    m = k + int(rng.integers(0, extra_steps + 1))
    Y = np.ones((n, m), dtype=np.uint8)
    diag = rng.permutation(m)[:k]
    p_fail = rng.uniform(0.05, 0.6)
    for u in range(n):
        if rng.random() < p_fail:
            hits = diag[rng.random(k) < rng.uniform(0.1, 0.5)]
            if hits.size == 0:
                hits = diag[[int(rng.integers(k))]]
            Y[u, hits] = 0
    costs = rng.uniform(0.1, 10.0, m)
    if rng.random() < 0.2:
        costs[int(rng.integers(m))] = 0.0
    return make_matrix(Y), CostVector(costs)


@pytest.fixture
def three_test():
    """u1 fails t1, u2 fails t2, u3 fails t1 and t2; u0 passes; costs 1, 2, 10."""
    Y = [[1, 1, 1], [0, 1, 1], [1, 0, 1], [0, 0, 1]]
    return make_matrix(Y), CostVector([1.0, 2.0, 10.0])


@pytest.fixture
def abort_fixture_path():
    ref = resources.files("adaptest") / "data" / "abort_fixture.csv"
    with resources.as_file(ref) as path:
        yield path


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
