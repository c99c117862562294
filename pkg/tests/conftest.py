import time
from functools import lru_cache

import pytest
from hypothesis import HealthCheck, settings

from edsym import SamplePlan
from edsym.cli import corpus_example, run

settings.register_profile(
    "edsym", max_examples=200, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("edsym")

PLAN = SamplePlan()


@lru_cache(maxsize=None)
def corpus_model(name: str):
    return corpus_example(name, PLAN)


@lru_cache(maxsize=None)
def corpus_report(name: str):
    return run(corpus_model(name), PLAN, name=name)


def task_result(name: str, task: str):
    for r in corpus_report(name).results:
        if r.name == task:
            return r
    raise KeyError(task)


@pytest.fixture
def plan():
    return PLAN


# ---------------------------------------------------------------- acceptance bookkeeping

SESSION = {"start": time.perf_counter(), "outcomes": {}, "lines": []}


def pytest_collection_modifyitems(items):
    # the acceptance suite reads the outcomes of the property suites, so it runs last
    items.sort(key=lambda item: item.nodeid.split("::")[0].endswith("test_acceptance.py"))


def pytest_runtest_logreport(report):
    key = report.nodeid.split("/")[-1]
    if report.when == "call" or report.outcome != "passed":
        SESSION["outcomes"][key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if SESSION["lines"]:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in SESSION["lines"]:
            terminalreporter.write_line(line)
