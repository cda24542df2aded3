import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

import pytest

_CRITERIA = pytest.StashKey[list]()


@pytest.fixture
def record_criterion(request):
    """Log one pass/fail line for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_CRITERIA, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
