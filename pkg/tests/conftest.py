import numpy as np
import pytest

from bigjumplab import TailModel

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        ok, detail = ACCEPTANCE_LINES[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def zeta15():
    return TailModel.zeta(1.5)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
