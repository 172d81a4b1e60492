import numpy as np
import pytest

from bayesid.models import MlpNetwork


def rel_err(a, b, floor=1e-12):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(b), floor)))


def tanh_231(seed):
    """2-3-1 tanh network with a bias on the hidden layer."""
    rng = np.random.default_rng(seed)
    return MlpNetwork([rng.normal(size=(3, 2)), rng.normal(size=(1, 3))], ["tanh", "identity"],
                      biases=[rng.normal(size=3), None], seed=seed)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
