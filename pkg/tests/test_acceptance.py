"""Every acceptance criterion at its stated tolerance, one status line each."""

import json
from pathlib import Path

import pytest

from stefan_kpp.verify import CRITERIA, run_criterion

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.mark.parametrize("cid", sorted(CRITERIA), ids=lambda c: f"criterion_{c:02d}")
def test_criterion(cid, capsys):
    result = run_criterion(cid)
    with capsys.disabled():
        print("\n" + result.line())
    assert result.passed, result.line()
    if cid == 3:
        pinned = json.loads((FIXTURES / "waves.json").read_text())["beta_star"]
        assert result.measured["beta_star"] == pytest.approx(pinned, abs=1e-6)
