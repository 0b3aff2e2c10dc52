import numpy as np
import pytest


def data_with_covariance(cov, n=400, seed=0):
    """Rows with zero mean and sample covariance exactly ``cov`` (1/n convention)."""
    rng = np.random.default_rng(seed)
    d = cov.shape[0]
    X = rng.standard_normal((n, d))
    X -= X.mean(axis=0)
    L0 = np.linalg.cholesky(X.T @ X / n)
    X = X @ np.linalg.inv(L0).T
    return X @ np.linalg.cholesky(cov).T


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict():
    """Record and print one acceptance line: ``verdict(id, passed, message)``."""
    def record(criterion, passed, message):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {message}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
