import numpy as np
import pytest

from edpinn import metainit, pde
from edpinn.pinn import TrainConfig


@pytest.fixture(scope="session")
def oscillator():
    return pde.Oscillator()


@pytest.fixture(scope="session")
def theta_si(oscillator):
    """Shared oscillator initialisation with the default meta-learning budget."""
    return metainit.reptile(oscillator, 20, 4, TrainConfig(steps=500), seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion and assert on it."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
