import numpy as np
import pytest

from tensorclt.limit import LimitParams
from tensorclt.measures import TauMeasure


@pytest.fixture
def delta1():
    return TauMeasure.point_mass(1.0)


@pytest.fixture
def zero_measure():
    return TauMeasure.point_mass(0.0)


@pytest.fixture
def p_mp(delta1):
    """Point mass at 1, c = 1 (eta0 = 4)."""
    return LimitParams(1.0, delta1)


@pytest.fixture
def p_mix():
    return LimitParams(0.5, TauMeasure.mixture([(0.5, "1/3"), (2.0, "2/3")]))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------------
# test_acceptance records one line per criterion; they are repeated at the end
# of the session so that the verdicts are visible without -s.

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_record():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[k])
