import numpy as np
import pytest

from adsel.synthetic import random_dataset


@pytest.fixture
def small_ds():
    return random_dataset(0, d=10, n=12, k=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is None:
        return
    report = outcome.get_result()
    if report.when == "call" or report.outcome != "passed":
        key = tuple(m.args)
        ok = _criteria.get(key, True) and report.outcome == "passed"
        _criteria[key] = ok


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), ok in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {title}")
