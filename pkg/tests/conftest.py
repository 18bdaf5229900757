import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_results: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    # criteria are collected once per test; a failure in any phase marks the whole test failed
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    n, title = crit
    row = _results.setdefault(n, {"title": title, "outcome": "PASS", "notes": []})
    if report.failed:
        row["outcome"] = "FAIL"
    elif report.skipped and row["outcome"] == "PASS" and report.when != "teardown":
        row["outcome"] = "SKIP"
    if report.when == "call":
        row["notes"] += [v for k, v in report.user_properties if k == "note"]


@pytest.fixture(autouse=True)
def _criterion_tag(request):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        request.node.user_properties.append(("criterion", tuple(m.args)))


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        row = _results[n]
        terminalreporter.write_line(f"criterion {n}: {row['outcome']}  {row['title']}")
        for note in row["notes"]:
            terminalreporter.write_line(f"    {note}")
