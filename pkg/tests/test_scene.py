import json

import pytest

from vlrr.geo import WorldPoint
from vlrr.scene import ArenaBounds, SceneError, builtin_scene_path, load_scene, save_scene


def test_builtin_fixtures_load():
    s1, s2 = load_scene("scene1"), load_scene("scene2")
    assert (len(s1.targets_truth), len(s1.obstacles_truth)) == (3, 2)
    assert (len(s2.targets_truth), len(s2.obstacles_truth)) == (4, 3)
    assert s1.image_path.read_bytes().startswith(b"\x89PNG")
    assert s1.ocp.N == 20 and s1.quad.m == 1.0


def test_save_load_round_trip(tmp_path):
    s = load_scene("scene2")
    save_scene(s, tmp_path / "s.json")
    back = load_scene(tmp_path / "s.json")
    assert back == s


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d.pop("targets_truth"), "missing"),
    (lambda d: d.update(targets_truth=[]), "no ground-truth"),
    (lambda d: d.update(targets_truth=[[9.0, 0.0]]), "outside arena"),
    (lambda d: d.update(ocp={"bogus": 1}), "unknown"),
    (lambda d: d.update(obstacles_truth=[["a", 1]]), "bad point"),
])
def test_invalid_scenes(tmp_path, mutate, message):
    d = json.loads(builtin_scene_path("scene1").read_text())
    mutate(d)
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(SceneError, match=message):
        load_scene(path)


def test_unreadable_scene(tmp_path):
    with pytest.raises(SceneError):
        load_scene(tmp_path / "nope.json")
    (tmp_path / "x.json").write_text("{")
    with pytest.raises(SceneError):
        load_scene(tmp_path / "x.json")


def test_arena_bounds():
    a = ArenaBounds()
    assert a.contains((2.5, -2.5, 3.0)) and not a.contains((0, 0, -0.1))
    assert a.contains((0, 0))
    s = load_scene("scene1")
    with pytest.raises(SceneError):
        s.with_(obstacles_truth=(WorldPoint(3.0, 0.0),))
