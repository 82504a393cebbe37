import csv
import json

import pytest

from vlrr.cli import UsageError, apply_overrides, main
from vlrr.sim import load_log


def test_plan_writes_detections(tmp_path, capsys):
    assert main(["plan", "--scene", "scene2", "--out", str(tmp_path)]) == 0
    d = json.loads((tmp_path / "detections.json").read_text())
    assert len(d["targets"]) == 4 and len(d["obstacles"]) == 3
    assert d["goals"]["obstacles"] == "red tripod stands"
    rows = list(csv.DictReader((tmp_path / "detections.csv").open()))
    assert len(rows) == 7
    assert "4 targets, 3 obstacles" in capsys.readouterr().out


def test_plan_with_command_override(tmp_path):
    assert main(["plan", "--scene", "scene1", "--out", str(tmp_path), "--command", "Visit the yellow X"]) == 0
    d = json.loads((tmp_path / "detections.json").read_text())
    assert d["goals"] == {"targets": "yellow X", "obstacles": ""}
    assert d["obstacles"] == []


def test_fly_writes_log_and_result(tmp_path, capsys):
    assert main(["fly", "--scene", "scene1", "--controller", "nmpc", "--out", str(tmp_path)]) == 0
    log = load_log(tmp_path / "scene1_nmpc_log.csv")
    summary = json.loads((tmp_path / "scene1_nmpc_result.json").read_text())
    assert summary["success"] and summary["cycles"] == len(log)
    assert (tmp_path / "scene1_nmpc_overlay.csv").exists()
    assert "success" in capsys.readouterr().out


def test_fly_failure_exit_code(tmp_path):
    rc = main(["fly", "--scene", "scene1", "--controller", "baseline", "--out", str(tmp_path),
               "--set", "autopilot.speed_cap=0.05"])
    assert rc == 1


def test_compare_recorded_times(capsys):
    assert main(["compare", "--times", "28,40,57", "--times", "30,48,72"]) == 0
    out = capsys.readouterr().out
    for s in ("30.0%", "50.9%", "37.5%", "58.3%", "33.75%", "54.6%"):
        assert s in out


def test_compare_scene(tmp_path, capsys):
    assert main(["compare", "--scene", "scene1", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader((tmp_path / "comparison.csv").open()))
    s = [float(r["value"]) for r in rows if r["kind"] == "speedup_pct"]
    assert len(s) == 1 and s[0] >= 20.0
    assert "nmpc vs baseline" in capsys.readouterr().out


def test_eval_prints_table(tmp_path, capsys):
    assert main(["eval", "--scene", "scene1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "accuracy: 5/5" in out
    rows = list(csv.DictReader((tmp_path / "scene1_errors.csv").open()))
    assert (rows[0]["error_x_cm"], rows[0]["error_y_cm"]) == ("15", "14")


@pytest.mark.parametrize("argv", [
    ["eval", "--scene", "missing_scene.json"],
    ["compare"],
    ["compare", "--times", "28"],
    ["fly", "--scene", "scene1", "--set", "nonsense"],
    ["fly", "--scene", "scene1", "--set", "ocp.bogus=1"],
    ["fly", "--scene", "scene1", "--set", "mission.colour=1"],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + (["--out", str(tmp_path)] if argv[0] == "fly" else [])) == 2


def test_argparse_errors():
    with pytest.raises(SystemExit) as info:
        main(["fly", "--scene", "scene1", "--controller", "pid"])
    assert info.value.code == 2


def test_live_backend_without_config_fails(tmp_path, monkeypatch):
    for var in ("VLRR_LLM_URL", "VLRR_VLM_URL"):
        monkeypatch.delenv(var, raising=False)
    assert main(["plan", "--scene", "scene1", "--backend", "live", "--out", str(tmp_path)]) == 1


def test_overrides(scenes):
    run = apply_overrides(scenes["scene1"], ["ocp.N=10", "quad.m=0.9", "sim.substeps=2",
                                             "autopilot.speed_cap=0.8", "mission.altitude=1.0"], seed=4)
    assert run.scene.ocp.N == 10 and run.scene.quad.m == 0.9 and run.scene.altitude == 1.0
    assert run.sim.substeps == 2 and run.sim.seed == 4 and run.gains.speed_cap == 0.8
    with pytest.raises(UsageError):
        apply_overrides(scenes["scene1"], ["ocp.N=0"])


def test_demo(tmp_path, capsys):
    assert main(["demo", "--out", str(tmp_path)]) == 0
    for name in ("scene1", "scene2"):
        for ctrl in ("nmpc", "baseline"):
            assert (tmp_path / name / f"{name}_{ctrl}_log.csv").exists()
    assert (tmp_path / "comparison.csv").exists()
    assert "Average speedup vs baseline" in capsys.readouterr().out
