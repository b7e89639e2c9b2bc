import numpy as np
import pytest

from esb.core import Dataset
from esb.rng import make_rng

ACCEPTANCE_LINES = []


def record_acceptance(criterion: int, passed: bool, detail: str) -> str:
    line = f"[criterion {criterion:>2}] {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def make_data(n, p, beta, seed=0, noise=1.0):
    rng = make_rng(seed)
    X = rng.standard_normal((n, p))
    y = X @ np.asarray(beta, dtype=float) + noise * rng.standard_normal(n)
    return Dataset(y, X)


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def small_data():
    return make_data(30, 6, [1.0, 0.6, 0.0, 0.0, 0.35, 0.0], seed=3)
