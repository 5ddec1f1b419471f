"""Shared pytest wiring.

Prints one PASS/FAIL line per acceptance test at the end of the run so
the gate criteria can be read off directly.
"""

_acceptance_results: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::", 1)[1]
    if report.when == "call":
        _acceptance_results[name] = "PASS" if report.passed else "FAIL"
    elif report.when == "setup":
        if report.failed:
            _acceptance_results[name] = "FAIL (setup)"
        elif report.skipped:
            _acceptance_results[name] = "SKIP"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name in sorted(_acceptance_results):
        terminalreporter.write_line(f"ACCEPTANCE {name}: {_acceptance_results[name]}")
