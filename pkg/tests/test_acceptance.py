"""Acceptance criteria, one test each; every run prints a single PASS/FAIL line."""
import pytest

from eoslab.acceptance import CRITERIA, run_criterion


@pytest.mark.slow
@pytest.mark.parametrize("number", sorted(CRITERIA), ids=lambda n: f"c{n:02d}_{CRITERIA[n][0].replace(' ', '_')}")
def test_criterion(number, capsys):
    result = run_criterion(number)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.detail
