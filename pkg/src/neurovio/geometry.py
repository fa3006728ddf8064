"""Pose and quaternion helpers shared across the package.

Quaternions are stored as ``(w, x, y, z)`` everywhere and kept in the
canonical hemisphere (``w >= 0``) so that ``q`` and ``-q`` compare equal.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .exceptions import DegenerateQuaternionError, DimensionError, EmptyInputError

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
TRAJECTORY_HEADER = ["timestamp_s", "px", "py", "pz", "qw", "qx", "qy", "qz"]

_UNIT_SLACK = 4.0 * np.finfo(float).eps


def quat_normalize(q) -> np.ndarray:
    """Return the unit quaternion in canonical form.

    The sign is chosen so that ``w > 0``; when ``w == 0`` the first non-zero
    vector component is made positive. Inputs with norm below ``1e-12`` raise
    :class:`DegenerateQuaternionError`.
    """
    q = np.asarray(q, dtype=float).reshape(4)
    norm = float(np.sqrt(np.dot(q, q)))
    if not np.isfinite(norm) or norm <= 1e-12:
        raise DegenerateQuaternionError(f"cannot normalize quaternion {q.tolist()}")
    if abs(norm - 1.0) > _UNIT_SLACK:
        q = q / norm
    else:
        q = q.copy()
    for comp in q:
        if comp != 0.0:
            if comp < 0.0:
                q = -q
            break
    return q + 0.0  # turn -0.0 into 0.0


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b``."""
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q) -> np.ndarray:
    """Rotation matrix mapping body-frame vectors into the world frame."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def quat_from_rotvec(rotvec) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-15:
        return IDENTITY_QUAT.copy()
    return quat_from_axis_angle(rotvec / angle, angle)


def quat_to_rotvec(q) -> np.ndarray:
    q = quat_normalize(q)
    s = np.linalg.norm(q[1:])
    if s < 1e-15:
        return np.zeros(3)
    angle = 2.0 * np.arctan2(s, q[0])
    return q[1:] / s * angle


def quat_slerp(q0, q1, frac: float) -> np.ndarray:
    """Spherical interpolation; ``frac`` of 0 and 1 return the endpoints exactly."""
    q0 = quat_normalize(q0)
    q1 = quat_normalize(q1)
    if frac == 0.0:
        return q0
    if frac == 1.0:
        return q1
    dot = float(np.dot(q0, q1))
    if dot < 0.0:
        q1 = -q1
        dot = -dot
    if dot > 0.9995:
        return quat_normalize(q0 + frac * (q1 - q0))
    theta = np.arccos(min(dot, 1.0))
    s = np.sin(theta)
    return quat_normalize((np.sin((1 - frac) * theta) * q0 + np.sin(frac * theta) * q1) / s)


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())
    timestamp: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(-1)
        if pos.shape != (3,):
            raise DimensionError(f"position must have 3 components, got {pos.shape}")
        if self.timestamp < 0 or not np.isfinite(self.timestamp):
            raise ValueError(f"timestamp must be finite and non-negative, got {self.timestamp}")
        object.__setattr__(self, "position", _frozen(pos))
        object.__setattr__(self, "orientation", _frozen(quat_normalize(self.orientation)))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    def as_vector(self) -> np.ndarray:
        """Seven-vector ``(px, py, pz, qw, qx, qy, qz)``."""
        return np.concatenate([self.position, self.orientation])

    @classmethod
    def from_vector(cls, vec, timestamp: float = 0.0) -> "Pose":
        vec = np.asarray(vec, dtype=float)
        return cls(vec[:3], vec[3:7], timestamp)

    def with_timestamp(self, timestamp: float) -> "Pose":
        return Pose(self.position, self.orientation, timestamp)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return (self.timestamp == other.timestamp
                and np.array_equal(self.position, other.position)
                and np.array_equal(self.orientation, other.orientation))

    __hash__ = None


def interpolate_pose(p0: Pose, p1: Pose, t: float) -> Pose:
    """Linear position / slerp orientation between two bracketing poses."""
    span = p1.timestamp - p0.timestamp
    if span <= 0:
        raise ValueError("bracketing poses must have increasing timestamps")
    frac = (t - p0.timestamp) / span
    if t == p0.timestamp:
        return p0.with_timestamp(t)
    if t == p1.timestamp:
        return p1.with_timestamp(t)
    pos = p0.position + frac * (p1.position - p0.position)
    return Pose(pos, quat_slerp(p0.orientation, p1.orientation, frac), t)


class Trajectory(Sequence[Pose]):
    """Time-ordered sequence of poses with strictly increasing timestamps."""

    def __init__(self, poses: Iterable[Pose] = ()):
        poses = list(poses)
        for a, b in zip(poses, poses[1:]):
            if not b.timestamp > a.timestamp:
                raise ValueError(
                    f"trajectory timestamps must strictly increase ({a.timestamp} -> {b.timestamp})")
        self._poses = poses

    def __len__(self) -> int:
        return len(self._poses)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return Trajectory(self._poses[idx])
        return self._poses[idx]

    def __iter__(self) -> Iterator[Pose]:
        return iter(self._poses)

    def __repr__(self):
        return f"Trajectory(n={len(self)})"

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([p.timestamp for p in self._poses])

    @property
    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self._poses]).reshape(-1, 3)

    @property
    def orientations(self) -> np.ndarray:
        return np.array([p.orientation for p in self._poses]).reshape(-1, 4)

    def interpolate(self, t: float) -> Pose:
        ts = self.timestamps
        if len(ts) == 0 or t < ts[0] or t > ts[-1]:
            raise ValueError(f"time {t} outside trajectory span")
        k = int(np.searchsorted(ts, t, side="right")) - 1
        if ts[k] == t:
            return self._poses[k]
        return interpolate_pose(self._poses[k], self._poses[k + 1], t)

    def bounding_box_diagonal(self) -> float:
        pos = self.positions
        return float(np.linalg.norm(pos.max(axis=0) - pos.min(axis=0)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(TRAJECTORY_HEADER)
            for p in self._poses:
                writer.writerow([repr(float(v)) for v in (p.timestamp, *p.position, *p.orientation)])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if [h.strip() for h in header] != TRAJECTORY_HEADER:
                raise ValueError(f"unexpected trajectory header {header}")
            poses = []
            for row in reader:
                vals = [float(v) for v in row]
                poses.append(Pose(vals[1:4], vals[4:8], vals[0]))
        return cls(poses)


def rmse(predicted, actual) -> float:
    """Root mean square of per-sample residual norms.

    Each row is one sample; its squared Euclidean residual norm is summed and
    divided by the number of samples (not the number of scalar elements).
    """
    pred = np.asarray(predicted, dtype=float)
    act = np.asarray(actual, dtype=float)
    if pred.shape != act.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {act.shape}")
    if pred.ndim == 0 or pred.shape[0] == 0:
        raise EmptyInputError("rmse needs at least one sample")
    resid = (pred - act).reshape(pred.shape[0], -1)
    scale = float(np.max(np.abs(resid)))
    if scale == 0.0 or not np.isfinite(scale):
        return scale
    # factor out the largest residual so tiny values do not underflow when squared
    resid = resid / scale
    return float(scale * np.sqrt(np.sum(resid * resid) / pred.shape[0]))


def translation_error(p1: Pose, p2: Pose) -> float:
    return float(np.linalg.norm(p1.position - p2.position))


def rotation_error(p1: Pose, p2: Pose) -> float:
    """Geodesic angle between the two orientations, in ``[0, pi]``."""
    return quat_angle(p1.orientation, p2.orientation)


def quat_angle(q1, q2) -> float:
    dot = abs(float(np.dot(q1, q2)) / (np.linalg.norm(q1) * np.linalg.norm(q2)))
    return float(2.0 * np.arccos(min(1.0, dot)))
