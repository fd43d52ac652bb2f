"""Acceptance-criterion bookkeeping.

Tests marked ``@pytest.mark.criterion(n, title, limit)`` fail if their call
phase exceeds ``limit`` seconds, and a one-line verdict per criterion is
printed at the end of the session.
"""

import time

import pytest

_VERDICTS: dict[int, tuple[str, str, float]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title, limit): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    item._started = time.perf_counter()
    yield
    item._elapsed = time.perf_counter() - item._started


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call":
        return
    n, title, limit = mark.args
    elapsed = getattr(item, "_elapsed", call.duration)
    if report.passed and elapsed > limit:
        report.outcome = "failed"
        report.longrepr = f"criterion {n} took {elapsed:.2f}s, limit {limit}s"
    _VERDICTS[n] = ("PASS" if report.passed else "FAIL", title, elapsed)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title, elapsed = _VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {verdict}  {title}  ({elapsed:.2f}s)")
