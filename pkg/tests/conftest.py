import numpy as np
import pytest

from avlm.regression import SufficientStats, snapshot

ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":").split(".")[0])):
        terminalreporter.write_line(line)


def make_stats(W, y, p):
    W = np.asarray(W, dtype=float)
    st = SufficientStats(p, W.shape[1] - p)
    st.update_many(W, y)
    return st


def random_snapshot(rng, n=40, p=2, d=1, beta=None, delta=None, sigma=1.0):
    X = np.column_stack([np.ones(n), rng.normal(size=(n, p - 1))]) if p > 0 else np.zeros((n, 0))
    Z = rng.normal(size=(n, d)) + 0.3 * (X[:, 1:2] if p > 1 else 0.0)
    beta = np.ones(p) if beta is None else beta
    delta = 0.3 * np.ones(d) if delta is None else delta
    y = X @ beta + Z @ delta + sigma * rng.normal(size=n)
    W = np.column_stack([X, Z])
    return snapshot(make_stats(W, y, p)), W, y


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
