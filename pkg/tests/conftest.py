"""Acceptance bookkeeping: one PASS/FAIL line per criterion in the summary."""
import pytest

_RESULTS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, title = mark.args
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        passed = rep.outcome == "passed" and not hasattr(rep, "wasxfail")
        note = ""
        if hasattr(rep, "wasxfail"):
            note = f" (expected failure: {rep.wasxfail})"
        elif rep.outcome == "failed" and rep.when == "call":
            note = f" ({rep.longrepr.reprcrash.message.splitlines()[0]})" if hasattr(rep.longrepr, "reprcrash") else ""
        _RESULTS[n] = (title, passed, note)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        title, passed, note = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d} {'PASS' if passed else 'FAIL'}  {title}{note}")
