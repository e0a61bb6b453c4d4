import pytest

from acceptance_log import LINES


def pytest_terminal_summary(terminalreporter):
    if not LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(LINES):
        terminalreporter.write_line(LINES[key])


@pytest.fixture
def record():
    def _record(number, passed, detail):
        status = "PASS" if passed else "FAIL"
        LINES[number] = f"criterion {number:>2}: {status}  {detail}"
        print(LINES[number])
        return passed

    return _record
