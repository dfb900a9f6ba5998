import logging

import numpy as np
import pytest

from sgvisco import spectral as sp

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line; lines are printed in the terminal summary."""
    def add(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
    return add


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _quiet_solver_logs():
    logging.getLogger("sgvisco").setLevel(logging.ERROR)
    yield


@pytest.fixture
def grid16():
    return sp.SpectralGrid(2, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
