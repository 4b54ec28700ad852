import functools

import pytest

from concentrate.linop import LinearizedOperator, SpecialSolutions
from concentrate.profile import LimitProblem, solve_ground_state


@functools.lru_cache(maxsize=None)
def profile_for(N, p):
    return solve_ground_state(LimitProblem(N, p))


@functools.lru_cache(maxsize=None)
def operator_for(N, p):
    return LinearizedOperator(profile_for(N, p))


@functools.lru_cache(maxsize=None)
def specials_for(N, p):
    return SpecialSolutions(operator_for(N, p))


@pytest.fixture
def profiles():
    return profile_for


@pytest.fixture
def operators():
    return operator_for


@pytest.fixture
def specials():
    return specials_for


# ---- acceptance summary -------------------------------------------------------------------
_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    def record(number, ok, detail):
        _VERDICTS[number] = (bool(ok), detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, (ok, detail) in _VERDICTS.items():
        terminalreporter.write_line(f"criterion {number:>4}: {'PASS' if ok else 'FAIL'}  {detail}")
