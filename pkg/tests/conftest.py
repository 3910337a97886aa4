import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import mission_fixture  # noqa: E402


@pytest.fixture(scope="session")
def base_transfer():
    return mission_fixture.solve_base()


def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    if acc is None or not acc.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(acc.VERDICTS):
        terminalreporter.write_line(acc.VERDICTS[n])
