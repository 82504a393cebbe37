"""Nadir camera ground projection and localization scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass

HIT_RADIUS_CM = 25.0


class OutOfFrameError(ValueError):
    """A world point falls outside the imaged ground footprint."""


@dataclass(frozen=True)
class CameraMeta:
    h_camera: float
    fov_diag: float  # radians
    aspect_w_h: float
    image_w: int
    image_h: int

    def __post_init__(self):
        if not self.h_camera > 0:
            raise ValueError("camera height must be positive")
        if not 0 < self.fov_diag < math.pi:
            raise ValueError("diagonal FoV must lie in (0, pi)")
        if not self.aspect_w_h > 0:
            raise ValueError("aspect ratio must be positive")
        if self.image_w < 1 or self.image_h < 1:
            raise ValueError("image dimensions must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "CameraMeta":
        d = dict(d)
        if "fov_diag_deg" in d:
            d["fov_diag"] = math.radians(d.pop("fov_diag_deg"))
        return cls(**d)

    def to_dict(self) -> dict:
        return {"h_camera": self.h_camera, "fov_diag": self.fov_diag, "aspect_w_h": self.aspect_w_h,
                "image_w": self.image_w, "image_h": self.image_h}


@dataclass(frozen=True)
class GroundFootprint:
    width_m: float
    height_m: float


@dataclass(frozen=True)
class PixelPoint:
    nx: float
    ny: float

    def __post_init__(self):
        if not (0.0 <= self.nx <= 1.0 and 0.0 <= self.ny <= 1.0):
            raise ValueError(f"normalized pixel coordinates outside [0, 1]: ({self.nx}, {self.ny})")


@dataclass(frozen=True)
class WorldPoint:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("world point must be finite")

    def as_tuple(self) -> tuple[float, float]:
        return (self.x, self.y)


def fov_decompose(meta: CameraMeta) -> tuple[float, float]:
    """Horizontal and vertical FoV (radians) of a rectilinear lens from its diagonal FoV."""
    t_d = math.tan(meta.fov_diag / 2.0)
    a = meta.aspect_w_h
    s = math.hypot(a, 1.0)
    return 2.0 * math.atan(a * t_d / s), 2.0 * math.atan(t_d / s)


def footprint(meta: CameraMeta) -> GroundFootprint:
    theta_h, theta_v = fov_decompose(meta)
    return GroundFootprint(width_m=2.0 * meta.h_camera * math.tan(theta_h / 2.0),
                           height_m=2.0 * meta.h_camera * math.tan(theta_v / 2.0))


def pixel_to_world(p: PixelPoint, meta: CameraMeta) -> WorldPoint:
    """Image center maps to the world origin; image y grows downward, world y upward."""
    fp = footprint(meta)
    return WorldPoint((p.nx - 0.5) * fp.width_m, (0.5 - p.ny) * fp.height_m)


def world_to_pixel(w: WorldPoint, meta: CameraMeta) -> PixelPoint:
    fp = footprint(meta)
    nx = w.x / fp.width_m + 0.5
    ny = 0.5 - w.y / fp.height_m
    if not (0.0 <= nx <= 1.0 and 0.0 <= ny <= 1.0):
        raise OutOfFrameError(f"({w.x:.3f}, {w.y:.3f}) m lies outside the "
                              f"{fp.width_m:.3f} x {fp.height_m:.3f} m footprint")
    return PixelPoint(nx, ny)


def localization_error(detected: WorldPoint, truth: WorldPoint,
                       radius_cm: float = HIT_RADIUS_CM) -> tuple[float, float, bool]:
    """Per-axis absolute errors in cm and the hit flag.

    A detection is a hit when both axis errors are within ``radius_cm``. The
    Euclidean distance is available from :func:`error_distance_cm`.
    """
    ex = abs(detected.x - truth.x) * 100.0
    ey = abs(detected.y - truth.y) * 100.0
    # compare at the tables' whole-centimetre resolution
    hit = max(round(ex, 6), round(ey, 6)) <= radius_cm
    return ex, ey, hit


def error_distance_cm(detected: WorldPoint, truth: WorldPoint) -> float:
    return math.hypot(detected.x - truth.x, detected.y - truth.y) * 100.0
