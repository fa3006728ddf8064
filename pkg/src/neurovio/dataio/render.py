"""Toy nadir camera over a procedurally textured ground plane.

The ground carries two octaves of periodic value noise plus a black/white
checkerboard marker on top of each pillar. The camera is gimbal-stabilized:
it looks straight down and only the vehicle yaw rotates the image. Pixel
values are quantized to 8-bit levels so frames survive a PGM round trip
unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DegenerateViewError
from ..geometry import Pose
from .dataset import Frame

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@dataclass(frozen=True)
class WorldSpec:
    texture_seed: int = 0
    texture_period: float = 32.0
    coarse_cell: float = 4.0
    fine_cell: float = 0.5
    coarse_weight: float = 0.35
    fine_weight: float = 0.25
    base_level: float = 0.15
    pillars: tuple = ((0.0, 0.0, 0.3), (5.0, 0.0, 0.3), (5.0, 4.0, 0.3), (0.0, 4.0, 0.3))
    marker_level: float = 1.0
    marker_cells: int = 4
    fov_deg: float = 70.0
    extra: dict = field(default_factory=dict)

    def describe(self) -> str:
        pillars = ";".join(f"{x:g}:{y:g}:{s:g}" for x, y, s in self.pillars)
        return (f"seed={self.texture_seed}|period={self.texture_period:g}|coarse={self.coarse_cell:g}"
                f"|fine={self.fine_cell:g}|fov={self.fov_deg:g}|cells={self.marker_cells}"
                f"|pillars={pillars}")

    @classmethod
    def parse(cls, text: str) -> "WorldSpec":
        fields = dict(item.split("=", 1) for item in text.split("|") if "=" in item)
        pillars = tuple(
            tuple(float(v) for v in p.split(":")) for p in fields.get("pillars", "").split(";") if p)
        return cls(texture_seed=int(fields.get("seed", 0)),
                   texture_period=float(fields.get("period", 32.0)),
                   coarse_cell=float(fields.get("coarse", 4.0)),
                   fine_cell=float(fields.get("fine", 0.5)),
                   fov_deg=float(fields.get("fov", 70.0)),
                   marker_cells=int(fields.get("cells", 4)),
                   pillars=pillars)

    def ground_sample_distance(self, altitude: float, width: int) -> float:
        """Meters of ground covered by one pixel at ``altitude``."""
        return 2.0 * altitude * np.tan(np.radians(self.fov_deg) / 2.0) / width


def _hash(ix: np.ndarray, iy: np.ndarray, salt: int) -> np.ndarray:
    # splitmix64 finalizer over the packed lattice coordinate
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
             ^ np.uint64(salt) * np.uint64(0x165667B19E3779F9)) & _MASK64
        h ^= h >> np.uint64(30)
        h = (h * np.uint64(0xBF58476D1CE4E5B9)) & _MASK64
        h ^= h >> np.uint64(27)
        h = (h * np.uint64(0x94D049BB133111EB)) & _MASK64
        h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(x: np.ndarray, y: np.ndarray, cell: float, period_cells: int, salt: int) -> np.ndarray:
    gx, gy = x / cell, y / cell
    x0, y0 = np.floor(gx), np.floor(gy)
    fx, fy = gx - x0, gy - y0
    ix = np.mod(x0.astype(np.int64), period_cells)
    iy = np.mod(y0.astype(np.int64), period_cells)
    ix1 = np.mod(ix + 1, period_cells)
    iy1 = np.mod(iy + 1, period_cells)
    sx = fx * fx * (3.0 - 2.0 * fx)
    sy = fy * fy * (3.0 - 2.0 * fy)
    v00, v10 = _hash(ix, iy, salt), _hash(ix1, iy, salt)
    v01, v11 = _hash(ix, iy1, salt), _hash(ix1, iy1, salt)
    top = v00 + sx * (v10 - v00)
    bottom = v01 + sx * (v11 - v01)
    return top + sy * (bottom - top)


def ground_intensity(world: WorldSpec, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Ground texture at world coordinates ``(x, y)``, markers included."""
    coarse_n = int(round(world.texture_period / world.coarse_cell))
    fine_n = int(round(world.texture_period / world.fine_cell))
    value = (world.base_level
             + world.coarse_weight * _value_noise(x, y, world.coarse_cell, coarse_n, 2 * world.texture_seed)
             + world.fine_weight * _value_noise(x, y, world.fine_cell, fine_n, 2 * world.texture_seed + 1))
    for px, py, half in world.pillars:
        dx, dy = x - px, y - py
        inside = (np.abs(dx) <= half) & (np.abs(dy) <= half)
        cell = 2.0 * half / world.marker_cells
        parity = (np.floor((dx + half) / cell) + np.floor((dy + half) / cell)) % 2
        value = np.where(inside, np.where(parity == 0, world.marker_level, 0.0), value)
    return value


def pixel_ground_points(world: WorldSpec, pose: Pose, shape) -> tuple[np.ndarray, np.ndarray]:
    height, width = shape[0], shape[1]
    altitude = float(pose.position[2])
    if not altitude > 0.0:
        raise DegenerateViewError(f"camera altitude must be positive, got {altitude}")
    gsd = world.ground_sample_distance(altitude, width)
    cols = (np.arange(width) + 0.5 - width / 2.0) * gsd
    rows = -(np.arange(height) + 0.5 - height / 2.0) * gsd
    u, v = np.meshgrid(cols, rows)
    w, qx, qy, qz = pose.orientation
    yaw = np.arctan2(2.0 * (w * qz + qx * qy), 1.0 - 2.0 * (qy * qy + qz * qz))
    c, s = np.cos(yaw), np.sin(yaw)
    return pose.position[0] + c * u - s * v, pose.position[1] + s * u + c * v


def render_frame(world: WorldSpec, pose: Pose, shape=(36, 64, 1)) -> Frame:
    """Render the downward view from ``pose`` as an ``H x W x C`` frame in [0, 1]."""
    x, y = pixel_ground_points(world, pose, shape)
    img = np.clip(ground_intensity(world, x, y), 0.0, 1.0)
    img = np.round(img * 255.0) / 255.0
    channels = shape[2] if len(shape) > 2 else 1
    pixels = np.repeat(img[..., None], channels, axis=2)
    return Frame(pixels, pose.timestamp, corrupted=False)
