import sys
from collections import defaultdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

CRITERIA = {
    1: "moment-fit roundtrip on the tabled rows",
    2: "GP sampler mean/variance and inverse-CDF roundtrip",
    3: "period reconstruction geometry",
    4: "reconstruction bias under uniform phase",
    5: "noiseless recovery",
    6: "compression-ratio trend",
    7: "sensing-period trend",
    8: "sensing-duration trend",
    9: "compressive vs full-rate baseline",
    10: "determinism across reruns, resume and worker counts",
}

_outcomes = defaultdict(list)
_notes = defaultdict(list)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def note(request):
    """Attach a measured value to the criterion of the current test."""
    marker = request.node.get_closest_marker("criterion")

    def _note(text):
        if marker:
            _notes[marker.args[0]].append(text)
    return _note


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = report.keywords.get("criterion")
    if marker is None:
        return
    n = int(report.user_properties and dict(report.user_properties).get("criterion") or 0)
    if n:
        _outcomes[n].append(report.outcome)


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_makereport(item, call):
    marker = item.get_closest_marker("criterion")
    if marker and not any(k == "criterion" for k, _ in item.user_properties):
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        if n not in _outcomes:
            continue
        ok = all(o == "passed" for o in _outcomes[n])
        tr.write_line(f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {CRITERIA[n]}")
        for text in _notes.get(n, []):
            tr.write_line(f"    {text}")
