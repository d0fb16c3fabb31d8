import sys
import time
from collections import OrderedDict
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# criterion name -> {"budget": seconds, "tests": {nodeid: outcome}, "elapsed": seconds, "notes": [..]}
_CRITERIA: "OrderedDict[str, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name, budget): acceptance criterion a test belongs to")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_call(item):
    start = time.perf_counter()
    yield
    item._elapsed = time.perf_counter() - start


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    name = marker.args[0]
    entry = _CRITERIA.setdefault(
        name, {"budget": marker.kwargs.get("budget"), "tests": {}, "elapsed": 0.0, "notes": []}
    )
    if report.when == "call":
        entry["elapsed"] += getattr(item, "_elapsed", report.duration)
        entry["tests"][item.nodeid] = report.outcome
        for key, value in report.user_properties:
            if key == "note":
                entry["notes"].append(value)
    elif report.failed:
        entry["tests"][item.nodeid] = "failed"


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name, entry in _CRITERIA.items():
        ok = bool(entry["tests"]) and all(o == "passed" for o in entry["tests"].values())
        budget = entry["budget"]
        timing = f"{entry['elapsed']:.1f}s"
        if budget is not None:
            timing += f" / budget {budget}s"
            ok = ok and entry["elapsed"] < budget
        tr.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({timing})")
        for note in entry["notes"]:
            tr.write_line(f"      {note}")
