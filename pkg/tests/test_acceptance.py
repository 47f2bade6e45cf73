"""Acceptance gate: every criterion at its stated tolerance.

Runs the full battery once (module scope) and prints one pass/fail line per
criterion.
"""

import pytest

from paracorona.verify import run_acceptance

CRITERIA = list(range(1, 10))


@pytest.fixture(scope="module")
def results():
    return {r["criterion"]: r for r in run_acceptance(quick=False, seed=0)}


@pytest.mark.parametrize("criterion", CRITERIA)
def test_criterion(results, criterion):
    r = results[criterion]
    status = "PASS" if r["passed"] else "FAIL"
    print(f"\n{status} - criterion {criterion}: {r['name']} "
          f"[measured: {r['measured']}; budget: {r['budget']}]")
    assert r["passed"], f"criterion {criterion} failed: {r['measured']}"
