from __future__ import annotations

import pytest

from helpers import ACCEPTANCE_RESULTS, BULB, CTRL, PLUG
from matterlens.model import RoleMap


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


@pytest.fixture
def roles() -> RoleMap:
    return RoleMap(frozenset({CTRL}), {BULB: "bulb", PLUG: "plug"})
