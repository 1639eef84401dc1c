import numpy as np
import pytest

from mkdvlab.gibbs import full_basis
from mkdvlab.lattice import smooth_random_field
from mkdvlab.oscillator import OscillatorSpec, build_spectrum


@pytest.fixture(scope="session")
def spectrum():
    return build_spectrum(OscillatorSpec())


@pytest.fixture(scope="session")
def basis():
    return full_basis(OscillatorSpec())


@pytest.fixture
def smooth_field():
    def make(seed=0, n=128, half_period=np.pi, **kw):
        return smooth_random_field(np.random.default_rng(seed), n, half_period, **kw)

    return make


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion; lines are printed in the run summary."""

    def record(number: int, title: str, passed: bool, detail: str = "") -> bool:
        ACCEPTANCE_LINES.append(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}".rstrip())
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
