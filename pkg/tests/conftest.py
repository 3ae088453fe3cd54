import numpy as np
import pytest

from renal_speckle.envelope_models import (
    Burr,
    Gamma,
    Lomax,
    Nakagami,
    Pareto,
    Rayleigh,
    Rician,
)

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_record():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""

    def record(criterion, passed, detail=""):
        status = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES.append(f"[{status}] {criterion}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_params(family, rng):
    """Parameter draws in ranges typical of 8-bit B-mode intensities."""
    if family == "Rayleigh":
        return Rayleigh(rng.uniform(5, 60))
    if family == "Nakagami":
        return Nakagami(rng.uniform(0.5, 3.0), rng.uniform(200, 8000))
    if family == "Gamma":
        return Gamma(rng.uniform(0.5, 6.0), rng.uniform(2, 30))
    if family == "Rician":
        return Rician(rng.uniform(0, 80), rng.uniform(5, 40))
    if family == "Burr":
        return Burr(rng.uniform(1.5, 4.0), rng.uniform(0.8, 3.0), rng.uniform(20, 80))
    if family == "Pareto":
        return Pareto(rng.uniform(1.0, 4.0), rng.uniform(1, 20))
    if family == "Lomax":
        return Lomax(rng.uniform(1.5, 5.0), rng.uniform(5, 60))
    raise KeyError(family)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
