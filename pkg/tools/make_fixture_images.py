"""Render the synthetic top-down arena images shipped with the scene fixtures.

Objects are drawn at their ground-truth positions: yellow boxes marked with an
X for targets, three red dots (tripod legs) for obstacles.

    python tools/make_fixture_images.py
"""

from pathlib import Path

from PIL import Image, ImageDraw

from vlrr.geo import world_to_pixel
from vlrr.scene import builtin_scene_path, load_scene


def render(name: str) -> Path:
    scene = load_scene(name)
    cam = scene.camera
    img = Image.new("RGB", (cam.image_w, cam.image_h), (92, 96, 104))
    draw = ImageDraw.Draw(img)
    for t in scene.targets_truth:
        p = world_to_pixel(t, cam)
        cx, cy = p.nx * cam.image_w, p.ny * cam.image_h
        draw.rectangle([cx - 14, cy - 14, cx + 14, cy + 14], fill=(240, 210, 40))
        draw.line([cx - 10, cy - 10, cx + 10, cy + 10], fill=(20, 20, 20), width=3)
        draw.line([cx - 10, cy + 10, cx + 10, cy - 10], fill=(20, 20, 20), width=3)
    for o in scene.obstacles_truth:
        p = world_to_pixel(o, cam)
        cx, cy = p.nx * cam.image_w, p.ny * cam.image_h
        for dx, dy in ((0, -9), (-8, 5), (8, 5)):
            draw.ellipse([cx + dx - 4, cy + dy - 4, cx + dx + 4, cy + dy + 4], fill=(200, 30, 30))
    out = builtin_scene_path(name).with_suffix(".png")
    img.save(out, optimize=True)
    return out


if __name__ == "__main__":
    for name in ("scene1", "scene2"):
        print(render(name))
