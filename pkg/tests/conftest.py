import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def record_criterion():
    """Store a one-line verdict for an acceptance criterion and echo it."""

    def record(number: int, passed: bool, detail: str):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
