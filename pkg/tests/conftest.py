import numpy as np
import pytest

from reactorgp import surrogate
from reactorgp.data import CHANNELS, NormalizationStats, build_dataset
from reactorgp.reactor import ReactorParams

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def params():
    return ReactorParams()


@pytest.fixture(scope="session")
def ref_stats():
    """Pooled temperature stats 359.12 / 6.47 with unit stats elsewhere."""
    mean = {c: 0.0 for c in CHANNELS}
    std = {c: 1.0 for c in CHANNELS}
    for c in ("S", "That", "T"):
        mean[c], std[c] = 359.12, 6.47
    mean["Mhat"], std["Mhat"] = 0.0075, 0.0075
    return NormalizationStats(mean, std)


@pytest.fixture(scope="session")
def small_dataset(params):
    return build_dataset(6, 11, params)


@pytest.fixture
def tiny_model(small_dataset):
    return surrogate.init(3, 1.0, hidden=(4, 3), H=4, F=3, stats=small_dataset.stats)
