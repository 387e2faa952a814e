from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# label -> (status, skip reason); parametrized cases share one label
_criteria: dict[str, tuple[str, str]] = {}
_RANK = {"PASS": 0, "SKIP": 1, "FAIL": 2}


def _record(label: str, status: str, reason: str = "") -> None:
    old = _criteria.get(label)
    if old is None or _RANK[status] > _RANK[old[0]]:
        _criteria[label] = (status, reason)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if report.skipped:
        reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else ""
        _record(label, "SKIP", reason.removeprefix("Skipped: "))
    elif report.failed:
        _record(label, "FAIL")
    elif report.when == "call":
        _record(label, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, (status, reason) in _criteria.items():
        suffix = f" ({reason})" if reason else ""
        terminalreporter.write_line(f"[{status}] {label}{suffix}")
