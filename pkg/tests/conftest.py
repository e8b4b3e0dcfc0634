import pytest

CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Records one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def record(number, passed: bool, detail: str) -> bool:
        line = f'{"PASS" if passed else "FAIL"} criterion {number}: {detail}'
        CRITERIA.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section('acceptance criteria')
        for line in CRITERIA:
            terminalreporter.write_line(line)
