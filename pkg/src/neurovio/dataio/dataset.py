"""Sensor data containers plus corruption and train/test splitting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from ..exceptions import EmptyInputError, MalformedDatasetError
from ..geometry import Pose, Trajectory


@dataclass(frozen=True)
class ImuSample:
    timestamp: float
    accel: np.ndarray
    gyro: np.ndarray


class ImuWindow:
    """IMU samples recorded in the half-open interval ``[t_start, t_end)``.

    Samples are held column-wise: ``timestamps`` (N,), ``accel`` (N, 3) and
    ``gyro`` (N, 3).
    """

    __slots__ = ("timestamps", "accel", "gyro", "t_start", "t_end")

    def __init__(self, timestamps, accel, gyro, t_start: float, t_end: float):
        ts = np.asarray(timestamps, dtype=float).reshape(-1)
        accel = np.asarray(accel, dtype=float).reshape(-1, 3)
        gyro = np.asarray(gyro, dtype=float).reshape(-1, 3)
        if len(ts) == 0:
            raise EmptyInputError(f"IMU window [{t_start}, {t_end}) has no samples")
        if accel.shape[0] != len(ts) or gyro.shape[0] != len(ts):
            raise MalformedDatasetError("IMU column lengths disagree")
        if np.any(np.diff(ts) < 0):
            raise MalformedDatasetError("IMU timestamps must be non-decreasing")
        if ts[0] < t_start or ts[-1] >= t_end:
            raise MalformedDatasetError(
                f"IMU samples [{ts[0]}, {ts[-1]}] fall outside window [{t_start}, {t_end})")
        if not (np.isfinite(accel).all() and np.isfinite(gyro).all()):
            raise MalformedDatasetError("IMU samples must be finite")
        for arr in (ts, accel, gyro):
            arr.setflags(write=False)
        self.timestamps, self.accel, self.gyro = ts, accel, gyro
        self.t_start, self.t_end = float(t_start), float(t_end)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def frame_interval(self) -> tuple[float, float]:
        return (self.t_start, self.t_end)

    @property
    def samples(self) -> list[ImuSample]:
        return [ImuSample(t, a, w) for t, a, w in zip(self.timestamps, self.accel, self.gyro)]

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample], t_start: float, t_end: float) -> "ImuWindow":
        return cls([s.timestamp for s in samples], [s.accel for s in samples],
                   [s.gyro for s in samples], t_start, t_end)


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray
    timestamp: float
    corrupted: bool = False

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.ndim == 2:
            px = px[..., None]
        if px.ndim != 3:
            raise ValueError(f"frame pixels must be H x W x C, got shape {px.shape}")
        if not self.corrupted and (px.min() < 0.0 or px.max() > 1.0):
            raise ValueError("clean frame pixels must lie in [0, 1]")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def shape(self) -> tuple:
        return self.pixels.shape


@dataclass(frozen=True)
class Observation:
    frame: Frame
    imu: ImuWindow
    ground_truth: Pose | None = None

    @property
    def timestamp(self) -> float:
        return self.frame.timestamp


@dataclass(frozen=True)
class DatasetMeta:
    imu_rate: float = 100.0
    camera_rate: float = 10.0
    image_shape: tuple = (36, 64, 1)
    seed: int | None = None
    world: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "imu_rate": repr(float(self.imu_rate)),
            "camera_rate": repr(float(self.camera_rate)),
            "image_shape": ",".join(str(int(d)) for d in self.image_shape),
            "seed": "" if self.seed is None else str(self.seed),
            "world": self.world,
        }
        out.update({k: str(v) for k, v in self.extra.items()})
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetMeta":
        d = dict(d)
        known = dict(
            imu_rate=float(d.pop("imu_rate", 100.0)),
            camera_rate=float(d.pop("camera_rate", 10.0)),
            image_shape=tuple(int(v) for v in str(d.pop("image_shape", "36,64,1")).split(",")),
            seed=(int(d["seed"]) if d.get("seed") not in (None, "") else None),
            world=d.pop("world", ""),
        )
        d.pop("seed", None)
        return cls(extra=d, **known)


class Dataset(Sequence[Observation]):
    """Ordered observations with strictly increasing frame timestamps.

    ``initial_pose`` and ``initial_frame`` belong to the frame that opens the
    first IMU window; the pose seeds the recurrent estimator.
    """

    def __init__(self, observations: Sequence[Observation] = (), meta: DatasetMeta | None = None,
                 initial_pose: Pose | None = None, initial_frame: Frame | None = None):
        observations = list(observations)
        for a, b in zip(observations, observations[1:]):
            if not b.timestamp > a.timestamp:
                raise MalformedDatasetError(
                    f"observation timestamps must strictly increase ({a.timestamp} -> {b.timestamp})")
        self.observations = tuple(observations)
        self.meta = meta if meta is not None else DatasetMeta()
        self.initial_pose = initial_pose
        self.initial_frame = initial_frame

    def __len__(self) -> int:
        return len(self.observations)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            obs = self.observations[idx]
            start = idx.indices(len(self))[0]
            if start == 0:
                init, frame = self.initial_pose, self.initial_frame
            else:
                prev = self.observations[start - 1]
                init, frame = prev.ground_truth, prev.frame
            return Dataset(obs, self.meta, init, frame) if obs else Dataset((), self.meta)
        return self.observations[idx]

    def __iter__(self) -> Iterator[Observation]:
        return iter(self.observations)

    def __repr__(self):
        return f"Dataset(n={len(self)}, shape={self.meta.image_shape})"

    @property
    def has_ground_truth(self) -> bool:
        return bool(self.observations) and all(o.ground_truth is not None for o in self.observations)

    def ground_truth(self) -> Trajectory:
        if not self.has_ground_truth:
            raise MalformedDatasetError("dataset lacks ground truth")
        return Trajectory(o.ground_truth for o in self.observations)

    @property
    def corrupted_mask(self) -> np.ndarray:
        return np.array([o.frame.corrupted for o in self.observations], dtype=bool)


def corrupt_frames(ds: Dataset, fraction: float, seed: int) -> Dataset:
    """Zero the pixels of ``round(fraction * len(ds))`` seeded-random frames and flag them."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    count = int(np.floor(fraction * len(ds) + 0.5))
    if count == 0:
        return ds
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(len(ds), size=count, replace=False).tolist())
    observations = []
    for i, obs in enumerate(ds):
        if i in chosen:
            frame = Frame(np.zeros_like(obs.frame.pixels), obs.frame.timestamp, corrupted=True)
            obs = replace(obs, frame=frame)
        observations.append(obs)
    return Dataset(observations, ds.meta, ds.initial_pose, ds.initial_frame)


def split(ds: Dataset, train_fraction: float = 0.8) -> tuple[Dataset, Dataset]:
    """Contiguous temporal split; the first ``train_fraction`` goes to training."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    if len(ds) < 2:
        raise MalformedDatasetError(f"cannot split {len(ds)} observation(s) into two non-empty parts")
    n_train = int(np.floor(train_fraction * len(ds) + 0.5))
    n_train = min(max(n_train, 1), len(ds) - 1)
    return ds[:n_train], ds[n_train:]
