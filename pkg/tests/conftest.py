
import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Record one PASS/FAIL line per acceptance criterion for the summary."""

    def record(name: str, passed: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{name} {'PASS' if passed else 'FAIL'}: {detail}")

    return record
