import numpy as np
import pytest

from pragmed.dataset import Dataset


def make_dataset(n=20, d_w=1, d_z=2, d_x=3, labeled=True, regime=0, seed=0):
    rng = np.random.default_rng(seed)
    y = rng.standard_normal(n) if labeled else None
    return Dataset(np.full(n, regime), rng.standard_normal((n, d_w)), rng.standard_normal((n, d_z)),
                   rng.standard_normal((n, d_x)), y)


@pytest.fixture
def small_dataset():
    return make_dataset()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
