import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record one line per acceptance criterion; printed in the terminal summary."""

    def record(number: int, passed: bool, text: str) -> bool:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {text}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
