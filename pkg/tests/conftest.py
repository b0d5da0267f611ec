import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_LINES: list[str] = []


class _Acceptance:
    def record(self, key: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {key}: {detail}")
        print(ACCEPTANCE_LINES[-1])
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return _Acceptance()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
