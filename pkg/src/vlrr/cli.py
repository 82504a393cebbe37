"""
Command-line entry points.

    vlrr plan    --scene scene1 [--backend mock|live] [--command TEXT] --out DIR
    vlrr fly     --scene scene1 --controller nmpc|baseline --out DIR
    vlrr compare --scene scene1 --out DIR
    vlrr compare --times 28,40,57 --times 30,48,72
    vlrr eval    --scene scene1 --out DIR
    vlrr demo    --out DIR

``--scene`` takes a JSON path or a built-in fixture name. ``--set key=value``
overrides config, with keys ``ocp.<field>``, ``quad.<field>``, ``sim.<field>``,
``autopilot.<field>`` and ``mission.altitude`` / ``mission.rate_hz``.

Exit codes: 0 success, 1 mission or solver failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from vlrr.autopilot import AutopilotGains
from vlrr.dynamics import QuadParams
from vlrr.geo import error_distance_cm, localization_error
from vlrr.mission import (
    DEFAULT_RATE_HZ,
    MissionAborted,
    MissionResult,
    average_speedups,
    compare_report,
    format_percent,
    run_mission_baseline,
    run_mission_nmpc,
    write_report_csv,
)
from vlrr.nmpc import OcpConfig
from vlrr.scene import BUILTIN_SCENES, Scene, SceneError, load_scene
from vlrr.sim import SimConfig, export_log
from vlrr.visionlang import (
    HttpBackend,
    MissionCommand,
    PlanResult,
    VisionLanguageError,
    mock_backend,
    plan_detections,
)

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2
CONTROLLERS = {"nmpc": run_mission_nmpc, "baseline": run_mission_baseline}


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    scene: Scene
    sim: SimConfig = field(default_factory=SimConfig)
    gains: AutopilotGains = field(default_factory=AutopilotGains)
    rate_hz: float = DEFAULT_RATE_HZ


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(scene: Scene, overrides: list[str], seed: int | None = None) -> RunConfig:
    groups: dict[str, dict] = {"ocp": {}, "quad": {}, "sim": {}, "autopilot": {}, "mission": {}}
    for item in overrides:
        key, sep, value = item.partition("=")
        group, dot, name = key.strip().partition(".")
        if not sep or not dot or group not in groups:
            raise UsageError(f"bad override {item!r}; expected group.field=value")
        groups[group][name] = _parse_value(value)
    run = RunConfig(scene)
    try:
        if groups["ocp"]:
            scene = replace(scene, ocp=OcpConfig.from_dict({**scene.ocp.to_dict(), **groups["ocp"]}))
        if groups["quad"]:
            scene = replace(scene, quad=QuadParams.from_dict({**scene.quad.to_dict(), **groups["quad"]}))
        for name, value in groups["mission"].items():
            if name == "altitude":
                scene = replace(scene, altitude=float(value))
            elif name == "rate_hz":
                run.rate_hz = float(value)
            else:
                raise UsageError(f"unknown mission override {name!r}")
        sim_kw = dict(groups["sim"])
        if seed is not None:
            sim_kw["seed"] = seed
        if sim_kw:
            run.sim = SimConfig(**{**{f.name: getattr(run.sim, f.name) for f in fields(SimConfig)},
                                   **sim_kw})
        if groups["autopilot"]:
            run.gains = replace(run.gains, **groups["autopilot"])
    except TypeError as exc:
        raise UsageError(f"unknown override field: {exc}") from exc
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    run.scene = scene
    return run


def make_backend(kind: str, scene: Scene):
    if kind == "mock":
        return mock_backend(scene)
    return HttpBackend.from_env()


def plan(scene: Scene, backend_kind: str = "mock", command_text: str | None = None) -> PlanResult:
    text = command_text or scene.command
    if scene.image_path is None:
        raise SceneError(f"scene {scene.name!r} has no image")
    try:
        cmd = MissionCommand(text, scene.image_path)
    except ValueError as exc:
        raise SceneError(str(exc)) from exc
    return plan_detections(cmd, scene.camera, make_backend(backend_kind, scene))


def _write_points_csv(path: Path, rows: list[tuple[str, int, float, float]]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index", "x", "y"])
        for kind, i, x, y in rows:
            w.writerow([kind, i, repr(x), repr(y)])


def write_detections(result: PlanResult, out: Path) -> tuple[Path, Path]:
    out.mkdir(parents=True, exist_ok=True)
    payload = {
        "goals": {"targets": result.goals.target_phrase, "obstacles": result.goals.obstacle_phrase},
        "targets": [[w.x, w.y] for w in result.targets],
        "obstacles": [[w.x, w.y] for w in result.obstacles],
        "targets_px": [[p.nx, p.ny] for p in result.detections.targets],
        "obstacles_px": [[p.nx, p.ny] for p in result.detections.obstacles],
    }
    jpath = out / "detections.json"
    jpath.write_text(json.dumps(payload, indent=2), encoding="utf-8")
    cpath = out / "detections.csv"
    _write_points_csv(cpath, [("target", i, w.x, w.y) for i, w in enumerate(result.targets)]
                      + [("obstacle", i, w.x, w.y) for i, w in enumerate(result.obstacles)])
    return jpath, cpath


def write_overlay(scene: Scene, result: PlanResult, mission: MissionResult, path: Path) -> None:
    rows = [("target_truth", i, w.x, w.y) for i, w in enumerate(scene.targets_truth)]
    rows += [("obstacle_truth", i, w.x, w.y) for i, w in enumerate(scene.obstacles_truth)]
    rows += [("target_detected", i, w.x, w.y) for i, w in enumerate(result.targets)]
    rows += [("obstacle_detected", i, w.x, w.y) for i, w in enumerate(result.obstacles)]
    rows += [("waypoint", i, p[0], p[1]) for i, p in enumerate(mission.notes.get("waypoints", []))]
    _write_points_csv(path, rows)


def fly(run: RunConfig, result: PlanResult, controller: str) -> MissionResult:
    fn = CONTROLLERS[controller]
    return fn(run.scene, result, rate_hz=run.rate_hz, sim_cfg=run.sim,
              planning_latency=result.latency_s,
              **({"gains": run.gains} if controller == "baseline" else {}))


def write_mission(scene: Scene, result: PlanResult, mission: MissionResult, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tag = f"{scene.name}_{mission.controller}"
    export_log(mission.log, out / f"{tag}_log.csv")
    (out / f"{tag}_result.json").write_text(json.dumps(mission.summary(), indent=2), encoding="utf-8")
    write_overlay(scene, result, mission, out / f"{tag}_overlay.csv")


def evaluate(scene: Scene, result: PlanResult) -> list[dict]:
    """Per-object localization errors, pairing detections with ground truth by order."""
    rows = []
    for kind, truth, detected in (("Target", scene.targets_truth, result.targets),
                                  ("Obstacle", scene.obstacles_truth, result.obstacles)):
        if len(truth) != len(detected):
            raise SceneError(f"{len(detected)} detected {kind.lower()}s vs {len(truth)} in ground truth")
        for i, (t, d) in enumerate(zip(truth, detected), start=1):
            ex, ey, hit = localization_error(d, t)
            rows.append({"object": f"{kind} {i}", "truth_x": t.x, "truth_y": t.y,
                         "detected_x": d.x, "detected_y": d.y, "error_x_cm": round(ex),
                         "error_y_cm": round(ey), "distance_cm": round(error_distance_cm(d, t), 2),
                         "hit": hit})
    return rows


def eval_scene_annotations(scene: Scene) -> PlanResult:
    if scene.multimodal_targets is None:
        raise SceneError(f"scene {scene.name!r} lacks multimodal annotations")
    return plan(scene, "mock")


# -- subcommands ---------------------------------------------------------------------------

def cmd_plan(args) -> int:
    scene = load_scene(args.scene)
    result = plan(scene, args.backend, args.command)
    out = Path(args.out)
    write_detections(result, out)
    print(f"{scene.name}: {len(result.targets)} targets, {len(result.obstacles)} obstacles "
          f"-> {out / 'detections.json'}")
    return EXIT_OK


def cmd_fly(args) -> int:
    scene = load_scene(args.scene)
    run = apply_overrides(scene, args.set, args.seed)
    result = plan(run.scene, args.backend)
    out = Path(args.out)
    try:
        mission = fly(run, result, args.controller)
    except MissionAborted as exc:
        write_mission(run.scene, result, exc.result, out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    write_mission(run.scene, result, mission, out)
    status = "success" if mission.success else "FAILED"
    print(f"{scene.name} {args.controller}: {status}, completion time {mission.completion_time:.2f} s "
          f"(planning {mission.planning_latency * 1e3:.1f} ms), "
          f"min clearance {mission.min_clearance:.3f} m")
    return EXIT_OK if mission.success else EXIT_FAILURE


def _parse_times(groups: list[str]) -> list[list[float]]:
    parsed = []
    for g in groups:
        try:
            ts = [float(v) for v in g.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"bad --times value {g!r}") from exc
        if len(ts) < 2:
            raise UsageError("--times needs at least two comma-separated values")
        parsed.append(ts)
    return parsed


def compare_recorded(time_groups: list[list[float]]):
    reports = []
    for i, ts in enumerate(time_groups, start=1):
        results = [(f"exp{j}", MissionResult.recorded(f"scene{i}", f"exp{j}", t))
                   for j, t in enumerate(ts, start=1)]
        reports.append(compare_report(results))
    return reports


def run_compare(run: RunConfig, backend: str = "mock"):
    result = plan(run.scene, backend)
    with ThreadPoolExecutor(max_workers=2) as pool:
        futs = {c: pool.submit(fly, run, result, c) for c in ("nmpc", "baseline")}
        missions = {c: f.result() for c, f in futs.items()}
    report = compare_report([("nmpc", missions["nmpc"]), ("baseline", missions["baseline"])])
    return result, missions, report


def _print_reports(reports) -> None:
    for rep in reports:
        print(rep.to_text())
    if len(reports) > 1:
        for other, avg in average_speedups(reports).items():
            print(f"Average speedup vs {other}: {format_percent(avg)}%")


def cmd_compare(args) -> int:
    out = Path(args.out) if args.out else None
    if args.times:
        reports = compare_recorded(_parse_times(args.times))
        _print_reports(reports)
        if out:
            out.mkdir(parents=True, exist_ok=True)
            write_report_csv(reports, out / "comparison.csv")
        return EXIT_OK
    if not args.scene:
        raise UsageError("compare needs --scene or --times")
    ok = True
    reports = []
    for scene_ref in args.scene:
        run = apply_overrides(load_scene(scene_ref), args.set, args.seed)
        try:
            result, missions, report = run_compare(run, args.backend)
        except MissionAborted as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FAILURE
        reports.append(report)
        for m in missions.values():
            ok &= m.success
            if out:
                write_mission(run.scene, result, m, out)
    _print_reports(reports)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        write_report_csv(reports, out / "comparison.csv")
    return EXIT_OK if ok else EXIT_FAILURE


EVAL_COLUMNS = ("object", "truth_x", "truth_y", "detected_x", "detected_y", "error_x_cm",
                "error_y_cm", "distance_cm", "hit")


def cmd_eval(args) -> int:
    scene = load_scene(args.scene)
    result = plan(scene, args.backend) if args.backend == "live" else eval_scene_annotations(scene)
    rows = evaluate(scene, result)
    print(f"{'object':<11s} {'axis':>4s} {'truth':>7s} {'detected':>9s} {'error cm':>9s}")
    for r in rows:
        print(f"{r['object']:<11s} {'X':>4s} {r['truth_x']:7.2f} {r['detected_x']:9.2f} {r['error_x_cm']:9d}")
        print(f"{'':<11s} {'Y':>4s} {r['truth_y']:7.2f} {r['detected_y']:9.2f} {r['error_y_cm']:9d}")
    hits = sum(r["hit"] for r in rows)
    print(f"accuracy: {hits}/{len(rows)} within 25 cm ({100.0 * hits / len(rows):.1f}%)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with (out / f"{scene.name}_errors.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=EVAL_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    return EXIT_OK


def cmd_demo(args) -> int:
    out = Path(args.out)
    ok = True
    reports = []
    for name in BUILTIN_SCENES:
        scene = load_scene(name)
        run = apply_overrides(scene, args.set, args.seed)
        result = plan(run.scene, "mock")
        write_detections(result, out / name)
        print(f"{name}: planned {len(result.targets)} targets, {len(result.obstacles)} obstacles")
        missions = {}
        for controller in ("nmpc", "baseline"):
            try:
                m = fly(run, result, controller)
            except MissionAborted as exc:
                write_mission(run.scene, result, exc.result, out / name)
                print(f"error: {exc}", file=sys.stderr)
                return EXIT_FAILURE
            write_mission(run.scene, result, m, out / name)
            missions[controller] = m
            ok &= m.success
            print(f"  {controller:<8s} success={m.success} time={m.completion_time:.2f} s "
                  f"clearance={m.min_clearance:.3f} m")
        reports.append(compare_report([("nmpc", missions["nmpc"]), ("baseline", missions["baseline"])]))
    _print_reports(reports)
    write_report_csv(reports, out / "comparison.csv")
    return EXIT_OK if ok else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlrr", description="Vision-language mission planning and NMPC flight.")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, scene_required=True, multi_scene=False):
        if multi_scene:
            p.add_argument("--scene", action="append", help="scene JSON path or fixture name (repeatable)")
        else:
            p.add_argument("--scene", required=scene_required, help="scene JSON path or fixture name")
        p.add_argument("--backend", choices=("mock", "live"), default="mock")
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("plan", help="detect targets and obstacles")
    common(p)
    p.add_argument("--command", default=None, help="override the scene's command text")
    p.set_defaults(func=cmd_plan, out_default="out")

    p = sub.add_parser("fly", help="fly one mission")
    common(p)
    p.add_argument("--controller", choices=tuple(CONTROLLERS), default="nmpc")
    p.set_defaults(func=cmd_fly, out_default="out")

    p = sub.add_parser("compare", help="NMPC vs baseline, or recorded times")
    common(p, multi_scene=True)
    p.add_argument("--times", action="append", default=[], metavar="T1,T2[,T3]",
                   help="recorded completion times for one scene, fastest method first (repeatable)")
    p.set_defaults(func=cmd_compare, out_default=None)

    p = sub.add_parser("eval", help="localization errors against ground truth")
    common(p)
    p.set_defaults(func=cmd_eval, out_default=None)

    p = sub.add_parser("demo", help="plan, fly and compare both built-in scenes offline")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_demo, out_default="demo_out")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out is None and args.out_default is not None:
        args.out = args.out_default
    try:
        return args.func(args)
    except (UsageError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except VisionLanguageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
