import pytest

_CRITERIA: dict[int, str] = {}


@pytest.fixture(scope="session")
def record_criterion():
    def record(num: int, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} criterion {num:2d}: {detail}"
        _CRITERIA[num] = line
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[num])
