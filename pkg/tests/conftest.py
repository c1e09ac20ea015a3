# one line per acceptance criterion, filled in by tests/test_acceptance.py
ACCEPTANCE_REPORT: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_REPORT):
        terminalreporter.write_line(ACCEPTANCE_REPORT[key])
