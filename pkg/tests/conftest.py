import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_([a-z0-9_]+)")
_outcomes = {}
_titles = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    num = int(m.group(1))
    _titles.setdefault(num, m.group(2).replace("_", " "))
    _outcomes.setdefault(num, "PASS")
    if report.failed or (report.when == "call" and report.skipped):
        _outcomes[num] = "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_outcomes):
        terminalreporter.write_line(f"criterion {num} ({_titles[num]}): {_outcomes[num]}")
