from __future__ import annotations

import pytest

from vlrr.dynamics import QuadParams
from vlrr.mission import run_mission_baseline, run_mission_nmpc
from vlrr.scene import load_scene
from vlrr.visionlang import MissionCommand, mock_backend, plan_detections

_acceptance_lines: list[str] = []
_setup_time: dict[str, float] = {}


@pytest.fixture
def params() -> QuadParams:
    return QuadParams()


@pytest.fixture(scope="session")
def scenes():
    return {name: load_scene(name) for name in ("scene1", "scene2")}


@pytest.fixture(scope="session")
def plans(scenes):
    return {name: plan_detections(MissionCommand(s.command, s.image_path), s.camera, mock_backend(s))
            for name, s in scenes.items()}


@pytest.fixture(scope="session")
def missions(scenes, plans):
    """Closed-loop runs of both controllers on both fixtures, shared across modules."""
    out = {}
    for name, s in scenes.items():
        out[name, "nmpc"] = run_mission_nmpc(s, plans[name])
        out[name, "baseline"] = run_mission_baseline(s, plans[name])
    return out


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "setup":
        _setup_time[report.nodeid] = report.duration
        if report.failed:
            _acceptance_lines.append(f"[FAIL] {report.nodeid.split('::')[-1]} (setup error)")
        return
    if report.when != "call":
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    seconds = report.duration + _setup_time.get(report.nodeid, 0.0)
    _acceptance_lines.append(f"[{status}] {name} ({seconds:.2f} s incl. setup)")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
