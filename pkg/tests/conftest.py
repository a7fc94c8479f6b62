"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_outcomes: dict[str, list[bool]] = {}
_titles: dict[str, str] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            _outcomes.setdefault(mark.args[0], [])
            _titles[mark.args[0]] = mark.args[1]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark and (report.when == "call" or report.failed or report.skipped):
        _outcomes[mark.args[0]].append(report.passed and report.when == "call")


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_outcomes):
        results = _outcomes[name]
        if not results:
            status = "not run"
        else:
            status = "PASS" if all(results) else "FAIL"
        n_ok = sum(results)
        terminalreporter.write_line(
            f"{name} {status}: {_titles[name]} ({n_ok}/{len(results)} checks)")
