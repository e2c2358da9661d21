import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", derandomize=True, deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    number = dict(report.user_properties).get("criterion")
    if number is None:
        return
    entry = _CRITERIA.setdefault(number, {"title": "", "ok": True, "details": []})
    props = dict(report.user_properties)
    entry["title"] = props.get("criterion_title", entry["title"])
    if report.when == "call":
        entry["details"] += [v for k, v in report.user_properties if k == "detail"]
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False


@pytest.fixture(autouse=True)
def _criterion_tag(request, record_property):
    marker = request.node.get_closest_marker("criterion")
    if marker is not None:
        record_property("criterion", marker.args[0])
        record_property("criterion_title", marker.args[1])


@pytest.fixture
def detail(record_property):
    """Attach a one-line measurement to the acceptance summary."""
    def note(text):
        record_property("detail", text)
    return note


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        status = "PASS" if entry["ok"] else "FAIL"
        line = f"[{status}] criterion {number:>2}: {entry['title']}"
        if entry["details"]:
            line += "  (" + "; ".join(entry["details"]) + ")"
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
