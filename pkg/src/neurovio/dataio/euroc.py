"""Reader and writer for the simplified EuRoC-style directory layout.

::

    imu.csv          timestamp_ns,wx,wy,wz,ax,ay,az
    frames.csv       timestamp_ns,filename
    groundtruth.csv  timestamp_ns,px,py,pz,qw,qx,qy,qz
    images/*.pgm     8-bit binary PGM, rescaled to [0, 1] on load
    dataset.meta     key = value lines
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from ..exceptions import MalformedDatasetError
from ..geometry import Pose, Trajectory
from .dataset import Dataset, DatasetMeta, Frame, ImuWindow, Observation

IMU_HEADER = ["timestamp_ns", "wx", "wy", "wz", "ax", "ay", "az"]
FRAMES_HEADER = ["timestamp_ns", "filename"]
GT_HEADER = ["timestamp_ns", "px", "py", "pz", "qw", "qx", "qy", "qz"]
IMAGE_DIR = "images"


def to_ns(t: float) -> int:
    return int(round(t * 1e9))


def from_ns(ns: int) -> float:
    return ns / 1e9


def read_meta(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def write_meta(path, values: dict) -> None:
    Path(path).write_text("".join(f"{k} = {v}\n" for k, v in values.items()))


def _read_csv(path: Path, header: list[str]) -> list[list[str]]:
    if not path.exists():
        raise FileNotFoundError(f"missing dataset file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = [h.strip().lstrip("#").strip() for h in next(reader)]
        except StopIteration:
            raise MalformedDatasetError(f"{path} is empty") from None
        if got != header:
            raise MalformedDatasetError(f"{path}: expected header {header}, got {got}")
        return [row for row in reader if row]


def _check_order(ns: Sequence[int], what: str, strict: bool = True) -> None:
    for a, b in zip(ns, ns[1:]):
        if b < a or (strict and b == a):
            raise MalformedDatasetError(f"{what} timestamps out of order at {b} ns")


def read_pgm(path) -> np.ndarray:
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float64)
    return arr / 255.0


def write_pgm(path, pixels: np.ndarray) -> None:
    gray = np.asarray(pixels, dtype=float)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    data = np.clip(np.round(gray * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PPM")


def load_euroc_layout(directory) -> Dataset:
    """Load a dataset directory, pairing each frame after the first with the IMU samples since the previous frame."""
    root = Path(directory)
    imu_rows = _read_csv(root / "imu.csv", IMU_HEADER)
    frame_rows = _read_csv(root / "frames.csv", FRAMES_HEADER)
    gt_rows = _read_csv(root / "groundtruth.csv", GT_HEADER)
    meta_path = root / "dataset.meta"
    meta = DatasetMeta.from_dict(read_meta(meta_path)) if meta_path.exists() else DatasetMeta()

    imu_ns = [int(r[0]) for r in imu_rows]
    _check_order(imu_ns, "imu", strict=False)
    imu_vals = np.array([[float(v) for v in r[1:7]] for r in imu_rows]).reshape(-1, 6)
    gyro, accel = imu_vals[:, :3], imu_vals[:, 3:]
    imu_ns_arr = np.array(imu_ns, dtype=np.int64)

    frame_ns = [int(r[0]) for r in frame_rows]
    _check_order(frame_ns, "frame")
    gt_ns = [int(r[0]) for r in gt_rows]
    _check_order(gt_ns, "ground-truth")
    gt = Trajectory(Pose([float(v) for v in r[1:4]], [float(v) for v in r[4:8]], from_ns(int(r[0])))
                    for r in gt_rows)

    corrupted = {int(v) for v in meta.extra.get("corrupted_frames", "").split(",") if v.strip()}

    def gt_at(ns: int) -> Pose | None:
        if not gt_ns or ns < gt_ns[0] or ns > gt_ns[-1]:
            return None
        return gt.interpolate(from_ns(ns)).with_timestamp(from_ns(ns))

    def frame_at(k: int) -> Frame:
        pixels = read_pgm(root / IMAGE_DIR / frame_rows[k][1])
        return Frame(pixels, from_ns(frame_ns[k]), corrupted=frame_ns[k] in corrupted)

    observations = []
    for k in range(1, len(frame_ns)):
        lo = int(np.searchsorted(imu_ns_arr, frame_ns[k - 1], side="left"))
        hi = int(np.searchsorted(imu_ns_arr, frame_ns[k], side="left"))
        if hi <= lo:
            raise MalformedDatasetError(f"frame at {frame_ns[k]} ns has no IMU samples in its window")
        window = ImuWindow(imu_ns_arr[lo:hi] / 1e9, accel[lo:hi], gyro[lo:hi],
                           from_ns(frame_ns[k - 1]), from_ns(frame_ns[k]))
        observations.append(Observation(frame_at(k), window, gt_at(frame_ns[k])))
    if not frame_ns:
        return Dataset((), meta)
    return Dataset(observations, meta, gt_at(frame_ns[0]), frame_at(0))


def save_euroc_layout(ds: Dataset, directory, ground_truth: Sequence[Pose] | None = None) -> Path:
    """Write ``ds`` in the layout read by :func:`load_euroc_layout`.

    ``ground_truth`` may supply a denser pose stream (e.g. IMU rate); by
    default the per-frame ground truth is written.
    """
    root = Path(directory)
    (root / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    if ds.initial_frame is None and len(ds):
        raise MalformedDatasetError("dataset lacks the opening frame needed to write frames.csv")

    frames = ([ds.initial_frame] if ds.initial_frame is not None else []) + [o.frame for o in ds]
    with open(root / "frames.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FRAMES_HEADER)
        for frame in frames:
            ns = to_ns(frame.timestamp)
            name = f"{ns}.pgm"
            write_pgm(root / IMAGE_DIR / name, frame.pixels)
            writer.writerow([ns, name])

    with open(root / "imu.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(IMU_HEADER)
        for obs in ds:
            w = obs.imu
            for t, a, g in zip(w.timestamps, w.accel, w.gyro):
                writer.writerow([to_ns(t), *(repr(float(v)) for v in g), *(repr(float(v)) for v in a)])

    if ground_truth is None:
        ground_truth = ([ds.initial_pose] if ds.initial_pose is not None else [])
        ground_truth += [o.ground_truth for o in ds if o.ground_truth is not None]
    with open(root / "groundtruth.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(GT_HEADER)
        for p in ground_truth:
            writer.writerow([to_ns(p.timestamp), *(repr(float(v)) for v in (*p.position, *p.orientation))])

    meta = ds.meta.to_dict()
    flagged = [str(to_ns(f.timestamp)) for f in frames if f.corrupted]
    meta["corrupted_frames"] = ",".join(flagged)
    write_meta(root / "dataset.meta", meta)
    return root
