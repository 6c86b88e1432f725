import sys

import numpy as np
import pytest

from subspace_dp import build_invariant_system


@pytest.fixture
def total4():
    """n = 4 with the grand total fixed."""
    return build_invariant_system(np.ones((1, 4)))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def gauss_rank(m, tol=1e-9):
    """Rank by plain Gaussian elimination with partial pivoting."""
    a = np.array(m, dtype=float)
    rows, cols = a.shape
    rank = 0
    for col in range(cols):
        if rank == rows:
            break
        piv = rank + int(np.argmax(np.abs(a[rank:, col])))
        if abs(a[piv, col]) <= tol:
            continue
        a[[rank, piv]] = a[[piv, rank]]
        a[rank + 1:] -= np.outer(a[rank + 1:, col] / a[rank, col], a[rank])
        rank += 1
    return rank


def brute_sensitivity(a, p):
    """Max over ordered column pairs, written as a double loop."""
    a = np.asarray(a, dtype=float)
    best = 0.0
    for i in range(a.shape[1]):
        for j in range(a.shape[1]):
            if i != j:
                best = max(best, float(np.sum(np.abs(a[:, i] - a[:, j]) ** p) ** (1.0 / p)))
    return best


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results, key=lambda k: (int(str(k).split("-")[0]), str(k))):
        terminalreporter.write_line(results[key])
