import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

NIGHTLY = os.environ.get("NORM_MMSE_NIGHTLY") == "1"
_ACCEPTANCE_LINES: list[str] = []


def pytest_collection_modifyitems(config, items):
    if NIGHTLY:
        return
    skip = pytest.mark.skip(reason="nightly run; set NORM_MMSE_NIGHTLY=1")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def report():
    """Record one acceptance verdict line; printed again in the terminal summary."""
    def _report(criterion: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
