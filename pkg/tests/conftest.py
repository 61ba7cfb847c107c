import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE = []


@pytest.fixture
def report(capsys):
    """Print one acceptance line immediately and keep it for the end-of-run summary."""

    def _report(criterion, passed, detail):
        line = f"[acceptance {criterion:>3}] {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print("\n" + line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: s.split("]")[0]):
            terminalreporter.write_line(line)
