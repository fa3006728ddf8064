"""Seeded synthetic flights: smooth trajectory, IMU model and rendered frames.

A flight is a chain of straight legs. Each leg accelerates with a smoothstep
speed ramp, cruises at constant speed and decelerates to rest, so position,
velocity and acceleration are available in closed form. Attitude follows
the thrust direction of a drag-free point mass at fixed yaw, which makes the
accelerometer read the specific force ``R^T (a + g e_z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from ..geometry import Pose, quat_normalize
from .dataset import Dataset, DatasetMeta, ImuWindow, Observation
from .render import WorldSpec, render_frame

GRAVITY = 9.81
NS_PER_S = 1_000_000_000


@dataclass(frozen=True)
class FlightSpec:
    duration: float = 20.1
    imu_rate: int = 100
    camera_rate: int = 10
    image_shape: tuple = (36, 64, 1)
    waypoints: tuple | None = None
    start: tuple = (2.5, 2.0, 3.0)
    cruise_altitude: float = 3.0
    low_altitude: float = 0.5
    cruise_speed: float = 1.5
    descent_speed: float = 0.6
    ramp_time: float = 1.0
    hover_time: float = 1.0
    yaw: float = 0.0
    tour: str = "shuttle"
    gravity: float = GRAVITY
    accel_noise: float = 0.05
    gyro_noise: float = 0.005
    accel_bias_sigma: float = 0.02
    gyro_bias_sigma: float = 0.002
    extra: dict = field(default_factory=dict)

    def validate(self) -> None:
        if not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.imu_rate <= 0 or self.camera_rate <= 0:
            raise ValueError("sensor rates must be positive")
        if self.imu_rate % self.camera_rate:
            raise ValueError("camera rate must divide the IMU rate")
        if self.waypoints is not None and len(self.waypoints) == 0:
            raise ValueError("waypoint list is empty")
        if self.tour not in ("shuttle", "random"):
            raise ValueError(f"tour must be 'shuttle' or 'random', got {self.tour!r}")

    def noiseless(self) -> "FlightSpec":
        from dataclasses import replace
        return replace(self, accel_noise=0.0, gyro_noise=0.0, accel_bias_sigma=0.0, gyro_bias_sigma=0.0)


class Leg:
    """Rest-to-rest straight-line move (or a hover when start equals end)."""

    def __init__(self, t0: float, start, end, speed: float, ramp: float, hold: float = 0.0):
        self.t0 = float(t0)
        self.start = np.asarray(start, dtype=float)
        self.end = np.asarray(end, dtype=float)
        delta = self.end - self.start
        self.distance = float(np.linalg.norm(delta))
        if self.distance == 0.0:
            self.direction = np.zeros(3)
            self.speed = 0.0
            self.ramp = 0.0
            self.duration = float(hold)
            return
        self.direction = delta / self.distance
        self.ramp = float(ramp)
        self.speed = min(float(speed), self.distance / self.ramp)
        self.duration = 2.0 * self.ramp + (self.distance - self.speed * self.ramp) / self.speed

    @property
    def t1(self) -> float:
        return self.t0 + self.duration

    def _ramp(self, tau: float) -> tuple[float, float, float]:
        x = tau / self.ramp
        v, tr = self.speed, self.ramp
        return v * tr * (x ** 3 - 0.5 * x ** 4), v * (3 * x * x - 2 * x ** 3), v / tr * (6 * x - 6 * x * x)

    def along(self, t: float) -> tuple[float, float, float]:
        """Arc length, speed and tangential acceleration at absolute time ``t``."""
        if self.speed == 0.0:
            return 0.0, 0.0, 0.0
        tau = min(max(t - self.t0, 0.0), self.duration)
        if tau < self.ramp:
            return self._ramp(tau)
        if tau <= self.duration - self.ramp:
            return 0.5 * self.speed * self.ramp + self.speed * (tau - self.ramp), self.speed, 0.0
        s, u, a = self._ramp(self.duration - tau)
        return self.distance - s, u, -a

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        s, u, a = self.along(t)
        return self.start + s * self.direction, u * self.direction, a * self.direction


class PiecewiseTrajectory:
    """Chain of legs; evaluates position, velocity, acceleration and attitude."""

    def __init__(self, legs: list[Leg], yaw: float = 0.0, gravity: float = GRAVITY):
        self.legs = legs
        self.yaw = yaw
        self.gravity = gravity
        self._ends = np.array([leg.t1 for leg in legs])

    @property
    def end_time(self) -> float:
        return float(self._ends[-1])

    def _leg(self, t: float) -> Leg:
        k = int(np.searchsorted(self._ends, t, side="left"))
        return self.legs[min(k, len(self.legs) - 1)]

    def state(self, t: float):
        if t >= self.end_time:
            last = self.legs[-1]
            return last.end.copy(), np.zeros(3), np.zeros(3)
        return self._leg(t).state(t)

    def rotation(self, t: float) -> np.ndarray:
        _, _, acc = self.state(t)
        return attitude_from_thrust(acc, self.yaw, self.gravity)

    def pose(self, t: float) -> Pose:
        pos, _, _ = self.state(t)
        quat = Rotation.from_matrix(self.rotation(t)).as_quat(scalar_first=True)
        return Pose(pos, quat_normalize(quat), t)

    def body_rate(self, t: float, h: float = 1e-5) -> np.ndarray:
        r_minus = self.rotation(max(t - h, 0.0))
        r_plus = self.rotation(t + h)
        if np.array_equal(r_minus, r_plus):
            return np.zeros(3)
        r_dot = (r_plus - r_minus) / (t + h - max(t - h, 0.0))
        omega_hat = self.rotation(t).T @ r_dot
        return 0.5 * np.array([omega_hat[2, 1] - omega_hat[1, 2],
                               omega_hat[0, 2] - omega_hat[2, 0],
                               omega_hat[1, 0] - omega_hat[0, 1]])

    def specific_force(self, t: float) -> np.ndarray:
        _, _, acc = self.state(t)
        return self.rotation(t).T @ (acc + np.array([0.0, 0.0, self.gravity]))


def attitude_from_thrust(acc, yaw: float, gravity: float = GRAVITY) -> np.ndarray:
    thrust = np.asarray(acc, dtype=float) + np.array([0.0, 0.0, gravity])
    b3 = thrust / np.linalg.norm(thrust)
    if b3[0] == 0.0 and b3[1] == 0.0:
        c, s = np.cos(yaw), np.sin(yaw)
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    heading = np.array([np.cos(yaw), np.sin(yaw), 0.0])
    b2 = np.cross(b3, heading)
    b2 /= np.linalg.norm(b2)
    b1 = np.cross(b2, b3)
    return np.column_stack([b1, b2, b3])


def plan_trajectory(world: WorldSpec, flight: FlightSpec, seed: int) -> PiecewiseTrajectory:
    """Explicit waypoints, or a seeded tour that hovers low over pillars.

    The ``shuttle`` tour picks one pillar and repeats start -> pillar (down,
    hover, up) -> start, so every stretch of the flight is revisited; the
    ``random`` tour hops between randomly chosen pillars.
    """
    flight.validate()
    legs: list[Leg] = []
    t = 0.0

    def add(end, speed, hold=0.0):
        nonlocal t
        start = legs[-1].end if legs else np.asarray(flight.start, dtype=float)
        leg = Leg(t, start, end, speed, flight.ramp_time, hold)
        if leg.duration > 0:
            legs.append(leg)
            t = leg.t1

    def visit(px, py):
        add((px, py, flight.cruise_altitude), flight.cruise_speed)
        add((px, py, flight.low_altitude), flight.descent_speed)
        add((px, py, flight.low_altitude), 0.0, hold=flight.hover_time)
        add((px, py, flight.cruise_altitude), flight.descent_speed)

    start = np.asarray(flight.start, dtype=float)
    add(start, 0.0, hold=flight.hover_time)
    if flight.waypoints is not None:
        for wp in flight.waypoints:
            add(np.asarray(wp, dtype=float), flight.cruise_speed)
    else:
        if not world.pillars:
            raise ValueError("pillar tour needs at least one pillar")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        if flight.tour == "shuttle":
            px, py, _ = world.pillars[int(rng.integers(len(world.pillars)))]
            while t < flight.duration:
                visit(px, py)
                add(start, flight.cruise_speed)
        else:
            current = None
            while t < flight.duration:
                choices = [i for i in range(len(world.pillars)) if i != current] or [0]
                current = int(rng.choice(choices))
                px, py, _ = world.pillars[current]
                visit(px, py)
    if not legs:
        legs.append(Leg(0.0, start, start, 0.0, flight.ramp_time, hold=flight.duration))
    return PiecewiseTrajectory(legs, flight.yaw, flight.gravity)


def imu_period_ns(flight: FlightSpec) -> int:
    return NS_PER_S // flight.imu_rate


def generate_synthetic(world: WorldSpec, flight: FlightSpec, seed: int) -> Dataset:
    """Deterministic dataset for ``(world, flight, seed)`` with ground truth at every frame."""
    flight.validate()
    traj = plan_trajectory(world, flight, seed)
    ratio = flight.imu_rate // flight.camera_rate
    n_frames = int(round(flight.duration * flight.camera_rate))
    if n_frames < 1:
        raise ValueError("duration too short for a single frame")
    period = imu_period_ns(flight)
    n_imu = (n_frames - 1) * ratio
    imu_ns = np.arange(n_imu, dtype=np.int64) * period
    imu_t = imu_ns / NS_PER_S

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    accel_bias = rng.normal(0.0, 1.0, 3) * flight.accel_bias_sigma
    gyro_bias = rng.normal(0.0, 1.0, 3) * flight.gyro_bias_sigma
    accel_noise = rng.normal(0.0, 1.0, (n_imu, 3)) * flight.accel_noise
    gyro_noise = rng.normal(0.0, 1.0, (n_imu, 3)) * flight.gyro_noise
    accel = np.array([traj.specific_force(t) for t in imu_t]).reshape(-1, 3) + accel_bias + accel_noise
    gyro = np.array([traj.body_rate(t) for t in imu_t]).reshape(-1, 3) + gyro_bias + gyro_noise

    frame_t = np.arange(n_frames, dtype=np.int64) * period * ratio / NS_PER_S
    poses = [traj.pose(t) for t in frame_t]
    observations = []
    for k in range(1, n_frames):
        lo, hi = (k - 1) * ratio, k * ratio
        window = ImuWindow(imu_t[lo:hi], accel[lo:hi], gyro[lo:hi], frame_t[k - 1], frame_t[k])
        frame = render_frame(world, poses[k], flight.image_shape)
        observations.append(Observation(frame, window, poses[k]))
    meta = DatasetMeta(
        imu_rate=float(flight.imu_rate), camera_rate=float(flight.camera_rate),
        image_shape=tuple(flight.image_shape), seed=seed, world=world.describe(),
    )
    return Dataset(observations, meta, poses[0], render_frame(world, poses[0], flight.image_shape))


def ground_truth_at_imu_rate(world: WorldSpec, flight: FlightSpec, seed: int) -> list[Pose]:
    """Ground-truth poses on the IMU clock, through the final frame."""
    traj = plan_trajectory(world, flight, seed)
    ratio = flight.imu_rate // flight.camera_rate
    n_frames = int(round(flight.duration * flight.camera_rate))
    n = (n_frames - 1) * ratio + 1
    period = imu_period_ns(flight)
    return [traj.pose(k * period / NS_PER_S) for k in range(n)]
