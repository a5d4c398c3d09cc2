import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Print a pass/fail line for an acceptance criterion and keep it for the summary."""

    def _record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
