import pytest

N_CRITERIA = 10

# criterion number -> summary line, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}
_seen_acceptance = []


@pytest.fixture
def record_criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        assert passed, line

    return record


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _seen_acceptance.append(report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _seen_acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        line = ACCEPTANCE_LINES.get(n, f"criterion {n:>2}: FAIL  not evaluated (errored or deselected)")
        terminalreporter.write_line(line)
