from __future__ import annotations

import os

import pytest
from hypothesis import HealthCheck, settings

from mfglab import presets
from mfglab.branch_solver import MinusDrift, PlusDrift, construct_branch

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def three_problem():
    return presets.three_solutions_problem()


@pytest.fixture(scope="session")
def plus_branch(three_problem):
    return construct_branch(three_problem, PlusDrift())


@pytest.fixture(scope="session")
def minus_branch(three_problem):
    return construct_branch(three_problem, MinusDrift())


@pytest.fixture(scope="session")
def three_catalog(three_problem):
    from mfglab.branch_solver import enumerate_branches
    return enumerate_branches(three_problem, n_random=3, seed=0)


# -- acceptance summary ---------------------------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None and (rep.when == "call" or rep.failed or rep.skipped):
        number, title = mark.args
        entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "seen": False})
        entry["seen"] = True
        entry["ok"] = entry["ok"] and rep.passed if rep.when == "call" else False
    return rep


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        verdict = "PASS" if e["ok"] and e["seen"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2}: {verdict}  {e['title']}")
