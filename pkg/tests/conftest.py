import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = ""
        if report.failed:
            lines = str(report.longrepr).strip().splitlines()
            errors = [line for line in lines if line.startswith("E ")]
            detail = (errors[0][1:].strip() if errors else lines[-1])[:160]
        entry = _RESULTS.setdefault(number, [title, 0, 0, ""])
        entry[1] += 1
        if report.failed:
            entry[2] += 1
            entry[3] = entry[3] or detail


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, runs, failed, detail = _RESULTS[number]
        tag = "FAIL" if failed else "PASS"
        counts = f" [{runs - failed}/{runs} cases]" if runs > 1 else ""
        line = f"criterion {number:>2} {tag}  {title}{counts}"
        terminalreporter.write_line(line + (f"  -- {detail}" if detail else ""))
