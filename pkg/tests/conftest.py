import numpy as np
import pytest

from tsfem import ClusteredDataset


def random_dataset(rng, n_units=4, per_unit=(3, 8), p=2, binary=(), signal=1.0):
    """Small clustered dataset with random unit sizes and a bit of structure."""
    sizes = rng.integers(per_unit[0], per_unit[1] + 1, size=n_units)
    unit = np.repeat(np.arange(n_units), sizes)
    N = len(unit)
    X = rng.normal(size=(N, p))
    for k in binary:
        X[:, k] = rng.integers(0, 2, size=N)
    y = signal * (rng.normal(size=n_units)[unit] + (X[:, 0] > 0) if p else rng.normal(size=n_units)[unit])
    y = y + rng.normal(size=N)
    return ClusteredDataset.from_arrays(y, unit, X)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
