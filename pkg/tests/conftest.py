import numpy as np
import pytest

from dgrnn.rnn import GruWeights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_weights(rng, input_dim, hidden_dim, scale=1.0):
    w = GruWeights.init(input_dim, hidden_dim, rng)
    return w.map(lambda a: a * scale) if scale != 1.0 else w


def random_inputs(rng, steps, input_dim):
    return rng.uniform(-1.0, 1.0, size=(steps, input_dim))


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""

    def record(label, ok, detail=""):
        ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        assert ok, f"{label}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
