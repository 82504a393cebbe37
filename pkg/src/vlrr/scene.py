"""Scene fixtures: camera metadata, ground truth, detections and all config knobs.

A scene file is JSON::

    {
      "name": "scene1",
      "command": "Fly around ...",
      "image": "scene1.png",                # relative to the scene file
      "camera": {"h_camera": 3.0, "fov_diag_deg": 100, "aspect_w_h": 1.333, "image_w": 640, "image_h": 480},
      "targets_truth": [[x, y], ...],
      "obstacles_truth": [[x, y], ...],
      "multimodal_targets": [[x, y], ...],
      "multimodal_obstacles": [[x, y], ...],
      "arena_bounds": {"x": [lo, hi], "y": [lo, hi], "z": [lo, hi]},
      "start_xy": [0.0, 0.0],
      "altitude": 1.2,
      "quad": {...QuadParams fields...},
      "ocp": {...OcpConfig fields...}
    }

Only ``name``, ``camera`` and ``targets_truth`` are mandatory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from vlrr.dynamics import QuadParams
from vlrr.geo import CameraMeta, WorldPoint
from vlrr.nmpc import OcpConfig

BUILTIN_SCENES = ("scene1", "scene2")


class SceneError(ValueError):
    """Malformed or unreadable scene file."""


@dataclass(frozen=True)
class ArenaBounds:
    x: tuple[float, float] = (-2.5, 2.5)
    y: tuple[float, float] = (-2.5, 2.5)
    z: tuple[float, float] = (0.0, 3.0)

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        return bool(self.x[0] <= p[0] <= self.x[1] and self.y[0] <= p[1] <= self.y[1]
                    and (len(p) < 3 or self.z[0] <= p[2] <= self.z[1]))


@dataclass(frozen=True)
class Scene:
    name: str
    camera: CameraMeta
    targets_truth: tuple[WorldPoint, ...]
    obstacles_truth: tuple[WorldPoint, ...] = ()
    multimodal_targets: tuple[WorldPoint, ...] | None = None
    multimodal_obstacles: tuple[WorldPoint, ...] | None = None
    quad: QuadParams = field(default_factory=QuadParams)
    ocp: OcpConfig = field(default_factory=OcpConfig)
    arena_bounds: ArenaBounds = field(default_factory=ArenaBounds)
    start_xy: tuple[float, float] = (0.0, 0.0)
    altitude: float = 1.2
    command: str = ""
    image_path: Path | None = None

    def __post_init__(self):
        if not self.targets_truth:
            raise SceneError(f"scene {self.name!r} has no ground-truth targets")
        pts = list(self.targets_truth) + list(self.obstacles_truth)
        pts += list(self.multimodal_targets or ()) + list(self.multimodal_obstacles or ())
        for w in pts:
            if not self.arena_bounds.contains((w.x, w.y)):
                raise SceneError(f"point ({w.x}, {w.y}) outside arena bounds in {self.name!r}")

    def with_(self, **kw) -> "Scene":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        def pts(ws):
            return None if ws is None else [[w.x, w.y] for w in ws]

        d = {
            "name": self.name,
            "command": self.command,
            "camera": self.camera.to_dict(),
            "targets_truth": pts(self.targets_truth),
            "obstacles_truth": pts(self.obstacles_truth),
            "multimodal_targets": pts(self.multimodal_targets),
            "multimodal_obstacles": pts(self.multimodal_obstacles),
            "arena_bounds": {"x": list(self.arena_bounds.x), "y": list(self.arena_bounds.y),
                             "z": list(self.arena_bounds.z)},
            "start_xy": list(self.start_xy),
            "altitude": self.altitude,
            "quad": self.quad.to_dict(),
            "ocp": self.ocp.to_dict(),
        }
        if self.image_path is not None:
            d["image"] = str(self.image_path)
        return d


def _points(raw, key: str) -> tuple[WorldPoint, ...]:
    try:
        return tuple(WorldPoint(float(x), float(y)) for x, y in raw)
    except (TypeError, ValueError) as exc:
        raise SceneError(f"bad point list under {key!r}: {exc}") from exc


def scene_from_dict(d: dict, base_dir: Path | None = None) -> Scene:
    try:
        name = d["name"]
        camera = CameraMeta.from_dict(d["camera"])
        targets = _points(d["targets_truth"], "targets_truth")
    except KeyError as exc:
        raise SceneError(f"scene is missing required key {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise SceneError(str(exc)) from exc

    kw = {}
    if "obstacles_truth" in d:
        kw["obstacles_truth"] = _points(d["obstacles_truth"], "obstacles_truth")
    for key in ("multimodal_targets", "multimodal_obstacles"):
        if d.get(key) is not None:
            kw[key] = _points(d[key], key)
    try:
        if "quad" in d:
            kw["quad"] = QuadParams.from_dict(d["quad"])
        if "ocp" in d:
            kw["ocp"] = OcpConfig.from_dict(d["ocp"])
        if "arena_bounds" in d:
            kw["arena_bounds"] = ArenaBounds(**{k: tuple(v) for k, v in d["arena_bounds"].items()})
    except (TypeError, ValueError) as exc:
        raise SceneError(str(exc)) from exc
    if "start_xy" in d:
        kw["start_xy"] = tuple(float(v) for v in d["start_xy"])
    if "altitude" in d:
        kw["altitude"] = float(d["altitude"])
    if "command" in d:
        kw["command"] = str(d["command"])
    if d.get("image"):
        img = Path(d["image"])
        kw["image_path"] = img if img.is_absolute() or base_dir is None else base_dir / img
    return Scene(name=name, camera=camera, targets_truth=targets, **kw)


def load_scene(path_or_name: str | Path) -> Scene:
    """Load a scene from a JSON file, or a built-in fixture by name (``scene1``, ``scene2``)."""
    path = Path(path_or_name)
    if not path.exists() and str(path_or_name) in BUILTIN_SCENES:
        path = builtin_scene_path(str(path_or_name))
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SceneError(f"cannot read scene file {path}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{path}: invalid JSON: {exc}") from exc
    return scene_from_dict(d, base_dir=path.parent)


def builtin_scene_path(name: str) -> Path:
    return Path(str(resources.files("vlrr") / "data" / f"{name}.json"))


def save_scene(scene: Scene, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2), encoding="utf-8")
