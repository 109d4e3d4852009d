import math
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from maryland_nls import (MarylandParams, ResonantSet, cwb_solve,  # noqa: E402
                          diagonalize_and_relabel, spatial_box)

GOLDEN = (math.sqrt(5) - 1) / 2
SILVER = math.sqrt(2) - 1
CONFIGS = Path(__file__).resolve().parents[1] / "configs"

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)


@pytest.fixture(scope="session")
def desk_eigsys():
    return diagonalize_and_relabel(MarylandParams(0.02, (GOLDEN,), 0.3), spatial_box(1, 10))


@pytest.fixture(scope="session")
def desk_resonant():
    return ResonantSet([(0,)], [1.3])


@pytest.fixture(scope="session")
def desk_solution(desk_eigsys, desk_resonant):
    return cwb_solve(desk_eigsys, desk_resonant, 1e-3, p=1, M=3, tol=1e-10, max_r=8)


@pytest.fixture(scope="session")
def small_eigsys():
    return diagonalize_and_relabel(MarylandParams(0.05, (GOLDEN,), 0.3), spatial_box(1, 4))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
