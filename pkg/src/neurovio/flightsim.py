"""Closed-loop quadrotor simulation: dynamics, guidance, PID control and estimators.

Frames: world z-up, body x-forward/y-left/z-up. Attitude angles
``(psi, theta, phi)`` compose as ``R = Rz(psi) Ry(-theta) Rx(phi)``, so a
positive pitch tilts the nose up and pushes thrust toward -x.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from .dataio.dataset import Frame, ImuWindow, Observation
from .dataio.render import WorldSpec, render_frame
from .exceptions import EmptyInputError, NumericFault
from .geometry import Pose, Trajectory, quat_normalize, rmse
from .kalman import KalmanState, constant_velocity_model, kf_step, pixel_noise_sigma
from .model import CORRUPTION_VARIANCE, frame_is_corrupted

E_Z = np.array([0.0, 0.0, 1.0])
LOG_COLUMNS = ["t", "true_px", "true_py", "true_pz", "true_qw", "true_qx", "true_qy", "true_qz",
               "est_px", "est_py", "est_pz", "est_qw", "est_qx", "est_qy", "est_qz",
               "des_px", "des_py", "des_pz", "des_vx", "des_vy", "des_vz",
               "cmd_F", "cmd_psi", "cmd_theta", "cmd_phi", "corrupted"]


def attitude_matrix(psi: float, theta: float, phi: float) -> np.ndarray:
    return Rotation.from_euler("ZYX", [psi, -theta, phi]).as_matrix()


def attitude_quaternion(psi: float, theta: float, phi: float) -> np.ndarray:
    return quat_normalize(Rotation.from_euler("ZYX", [psi, -theta, phi]).as_quat(scalar_first=True))


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1.0
    gravity: float = 9.81
    drag: float = 0.1
    attitude_lag: float = 0.15
    max_tilt: float = np.radians(30.0)
    max_thrust: float = 2.0 * 9.81
    ground_z: float = 0.0


@dataclass(frozen=True)
class VehicleState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    attitude: np.ndarray = field(default_factory=lambda: np.zeros(3))  # psi, theta, phi
    angular_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    time: float = 0.0

    def __post_init__(self):
        for name in ("position", "velocity", "attitude", "angular_velocity"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(3)
            if not np.isfinite(arr).all():
                raise NumericFault(f"vehicle {name} is not finite")
            object.__setattr__(self, name, arr)

    @property
    def orientation(self) -> np.ndarray:
        return attitude_quaternion(*self.attitude)

    @property
    def pose(self) -> Pose:
        return Pose(self.position, self.orientation, self.time)


@dataclass(frozen=True)
class ControlCommand:
    thrust: float
    psi: float = 0.0
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not self.thrust >= 0:
            raise ValueError(f"thrust must be non-negative, got {self.thrust}")

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.psi, self.theta, self.phi])


def hover_command(params: VehicleParams = VehicleParams(), psi: float = 0.0) -> ControlCommand:
    return ControlCommand(params.mass * params.gravity, psi, 0.0, 0.0)


def dynamics_step(state: VehicleState, cmd: ControlCommand, dt: float,
                  params: VehicleParams = VehicleParams()) -> tuple[VehicleState, np.ndarray]:
    """Advance one step; returns the new state and the acceleration applied over the step.

    The attitude lag is integrated exactly. Velocity takes an explicit step
    with the post-lag attitude and position uses the mean of old and new
    velocity, which is exact for the piecewise-constant acceleration.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    decay = np.exp(-dt / params.attitude_lag)
    target = cmd.angles
    attitude = target + (state.attitude - target) * decay
    thrust_dir = attitude_matrix(*attitude) @ E_Z
    acc = thrust_dir * cmd.thrust / params.mass - params.gravity * E_Z - params.drag / params.mass * state.velocity
    velocity = state.velocity + acc * dt
    position = state.position + 0.5 * (state.velocity + velocity) * dt
    if position[2] < params.ground_z:
        position[2] = params.ground_z
        velocity = velocity.copy()
        velocity[2] = max(velocity[2], 0.0)
    rates = (attitude - state.attitude) / dt
    return VehicleState(position, velocity, attitude, rates[::-1], state.time + dt), acc


# ---------------------------------------------------------------- guidance

@dataclass(frozen=True)
class GuidanceTarget:
    desired_position: np.ndarray
    desired_velocity: np.ndarray
    phase: str = "transit"
    touchdown: bool = False


@dataclass
class Mission:
    """Timed waypoint schedule, optionally ending in a constant-rate descent onto a pad."""

    waypoints: list  # (t, x, y, z)
    pad: tuple | None = None
    pad_z: float = 0.0
    descent_rate: float = 0.5
    touchdown_height: float = 0.02
    touchdown_speed: float = 1.0
    timeout: float = 30.0
    yaw: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.waypoints:
            raise EmptyInputError("mission has no waypoints")
        self.waypoints = [tuple(float(v) for v in wp) for wp in self.waypoints]
        times = [wp[0] for wp in self.waypoints]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        if self.pad is not None:
            self.pad = tuple(float(v) for v in self.pad)

    @property
    def start(self) -> np.ndarray:
        return np.array(self.waypoints[0][1:])

    @property
    def descent_start(self) -> float:
        return self.waypoints[-1][0]

    @property
    def touchdown_time(self) -> float | None:
        if self.pad is None:
            return None
        return self.descent_start + (self.waypoints[-1][3] - self.pad_z) / self.descent_rate

    def to_text(self) -> str:
        lines = [f"wp = {t:g},{x:g},{y:g},{z:g}" for t, x, y, z in self.waypoints]
        if self.pad is not None:
            lines.append(f"pad = {self.pad[0]:g},{self.pad[1]:g}")
        lines += [f"pad_z = {self.pad_z:g}", f"descent_rate = {self.descent_rate:g}",
                  f"touchdown_height = {self.touchdown_height:g}", f"touchdown_speed = {self.touchdown_speed:g}",
                  f"timeout = {self.timeout:g}", f"yaw = {self.yaw:g}"]
        lines += [f"{k} = {v}" for k, v in self.extra.items()]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def parse(cls, text: str) -> "Mission":
        waypoints, kwargs, extra = [], {}, {}
        floats = ("pad_z", "descent_rate", "touchdown_height", "touchdown_speed", "timeout", "yaw")
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line or "=" not in line:
                continue
            key, _, value = (part.strip() for part in line.partition("="))
            if key == "wp":
                waypoints.append(tuple(float(v) for v in value.split(",")))
            elif key == "pad":
                kwargs["pad"] = tuple(float(v) for v in value.split(","))
            elif key in floats:
                kwargs[key] = float(value)
            else:
                extra[key] = value
        return cls(waypoints, extra=extra, **kwargs)

    @classmethod
    def load(cls, path) -> "Mission":
        return cls.parse(Path(path).read_text())


def landing_mission(start=(2.5, 2.0, 3.0), pad=(5.0, 4.0), transit_time=3.0, hold=0.5,
                    descent_rate=0.6, timeout=15.0) -> Mission:
    """Fly level from ``start`` to above ``pad``, settle, then descend onto it."""
    x, y, z = start
    t1 = 1.0 + transit_time
    return Mission([(0.0, x, y, z), (1.0, x, y, z), (t1, pad[0], pad[1], z), (t1 + hold, pad[0], pad[1], z)],
                   pad=pad, descent_rate=descent_rate, timeout=timeout)


def guidance(current_estimate: Pose | None, plan: Mission, t: float) -> GuidanceTarget:
    """Position set point and its analytic rate from the waypoint schedule.

    The estimate is accepted for interface symmetry; the schedule does not
    depend on it.
    """
    wps = np.array(plan.waypoints)
    times = wps[:, 0]
    if t <= times[0]:
        return GuidanceTarget(wps[0, 1:].copy(), np.zeros(3), "transit")
    if t < times[-1]:
        k = int(np.searchsorted(times, t, side="right")) - 1
        span = times[k + 1] - times[k]
        frac = (t - times[k]) / span
        rate = (wps[k + 1, 1:] - wps[k, 1:]) / span
        return GuidanceTarget(wps[k, 1:] + frac * (wps[k + 1, 1:] - wps[k, 1:]), rate, "transit")
    last = wps[-1, 1:]
    if plan.pad is None:
        return GuidanceTarget(last.copy(), np.zeros(3), "hold")
    z = last[2] - plan.descent_rate * (t - times[-1])
    xy = np.array(plan.pad)
    if z <= plan.pad_z:
        return GuidanceTarget(np.array([xy[0], xy[1], plan.pad_z]), np.zeros(3), "landing", True)
    return GuidanceTarget(np.array([xy[0], xy[1], z]), np.array([0.0, 0.0, -plan.descent_rate]), "landing")


# ---------------------------------------------------------------- control

@dataclass(frozen=True)
class PidGains:
    kp: tuple = (2.0, 2.0, 3.0)
    ki: tuple = (0.0, 0.0, 0.0)
    kd: tuple = (2.6, 2.6, 3.5)
    integral_limit: float = 1.0

    def to_dict(self) -> dict:
        return {"kp": self.kp, "ki": self.ki, "kd": self.kd, "integral_limit": self.integral_limit}


class PidController:
    """Per-axis PID on position error with velocity feed-forward, inverted to thrust and tilt."""

    def __init__(self, gains: PidGains = PidGains(), params: VehicleParams = VehicleParams(), yaw: float = 0.0):
        self.gains = gains
        self.params = params
        self.yaw = yaw
        self.integral = np.zeros(3)

    def reset(self) -> None:
        self.integral = np.zeros(3)

    def __call__(self, estimate: Pose, est_velocity, target: GuidanceTarget, dt: float) -> ControlCommand:
        return pid_controller(estimate, est_velocity, target, self.gains, dt, self)


def pid_controller(estimate: Pose, est_velocity, target: GuidanceTarget, gains: PidGains, dt: float,
                   memory: PidController | None = None) -> ControlCommand:
    """Desired acceleration from PID, then thrust and tilt by exact inversion of the thrust direction.

    ``memory`` holds the integrator; without it the integral term is zero.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    params = memory.params if memory is not None else VehicleParams()
    yaw = memory.yaw if memory is not None else 0.0
    kp, ki, kd = (np.asarray(g, dtype=float) for g in (gains.kp, gains.ki, gains.kd))
    err = target.desired_position - estimate.position
    verr = target.desired_velocity - np.asarray(est_velocity, dtype=float)
    integral = np.zeros(3)
    if memory is not None:
        # anti-windup: clamp the accumulated error
        memory.integral = np.clip(memory.integral + err * dt, -gains.integral_limit, gains.integral_limit)
        integral = memory.integral
    acc = kp * err + ki * integral + kd * verr

    g = params.gravity
    az = max(acc[2] + g, 0.1 * g)
    c, s = np.cos(yaw), np.sin(yaw)
    ax_b = c * acc[0] + s * acc[1]
    ay_b = -s * acc[0] + c * acc[1]
    lim = params.max_tilt
    theta = float(np.clip(np.arctan2(-ax_b, az), -lim, lim))
    phi = float(np.clip(np.arctan2(-ay_b * np.cos(theta), az), -lim, lim))
    thrust = params.mass * az / (np.cos(theta) * np.cos(phi))
    return ControlCommand(float(np.clip(thrust, 0.0, params.max_thrust)), yaw, theta, phi)


# ---------------------------------------------------------------- estimators

class TruthEstimator:
    """Passes the true pose and velocity through at every control step."""

    name = "truth"
    every_step = True

    def reset(self, state: VehicleState) -> None:
        pass

    def update(self, state: VehicleState, obs: Observation | None):
        return state.pose, state.velocity


class KalmanEstimator:
    """Constant-velocity KF on noisy position fixes at camera rate."""

    name = "kf"
    every_step = False

    def __init__(self, meas_sigma: float = 0.05, accel_sigma: float = 1.0, dt: float = 0.1, seed: int = 0):
        self.model = constant_velocity_model(dt, accel_sigma, meas_sigma)
        self.meas_sigma = meas_sigma
        self.seed = seed

    def reset(self, state: VehicleState) -> None:
        self.rng = np.random.default_rng(np.random.SeedSequence([self.seed, 4]))
        P0 = np.diag([self.meas_sigma ** 2] * 3 + [1.0] * 3)
        self.state = KalmanState(np.concatenate([state.position, np.zeros(3)]), P0)

    def update(self, state: VehicleState, obs: Observation | None):
        fix = state.position + self.rng.normal(0.0, self.meas_sigma, 3)
        self.state = kf_step(self.model, self.state, fix)
        return Pose(self.state.mean[:3], state.orientation, state.time), self.state.mean[3:]


class LearnedEstimator:
    """Online loop over a trained regressor: variance check, then full or IMU-only branch."""

    name = "learned"
    every_step = False

    def __init__(self, regressor, threshold: float | None = None):
        self.regressor = regressor
        self.threshold = regressor.corruption_threshold if threshold is None else threshold

    def reset(self, state: VehicleState) -> None:
        self.runner = self.regressor.online(state.pose)
        self.last = None

    @property
    def counts(self):
        return self.runner.counts

    def update(self, state: VehicleState, obs: Observation | None):
        pose = self.runner.step(obs)
        prev, self.last = self.last, pose
        if prev is None:
            return pose, np.zeros(3)
        return pose, (pose.position - prev.position) / (pose.timestamp - prev.timestamp)


# ---------------------------------------------------------------- loop

@dataclass(frozen=True)
class SensorSpec:
    imu_rate: int = 100
    camera_rate: int = 10
    image_shape: tuple = (36, 64, 1)
    accel_noise: float = 0.05
    gyro_noise: float = 0.005
    accel_bias_sigma: float = 0.02
    gyro_bias_sigma: float = 0.002
    corrupt_fraction: float = 0.0


@dataclass
class FlightLog:
    rows: list = field(default_factory=list)
    dt: float = 0.01
    touchdown: bool = False
    touchdown_time: float | None = None
    pad: tuple | None = None
    imu_only_steps: int = 0
    corrupted_frames: int = 0
    aborted: str | None = None

    def append(self, t, state: VehicleState, estimate: Pose, target: GuidanceTarget, cmd: ControlCommand,
               corrupted: bool) -> None:
        self.rows.append([t, *state.position, *state.orientation, *estimate.position, *estimate.orientation,
                          *target.desired_position, *target.desired_velocity,
                          cmd.thrust, cmd.psi, cmd.theta, cmd.phi, int(corrupted)])

    @property
    def array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float).reshape(-1, len(LOG_COLUMNS))

    def column(self, name: str) -> np.ndarray:
        return self.array[:, LOG_COLUMNS.index(name)]

    @property
    def true_positions(self) -> np.ndarray:
        return self.array[:, 1:4]

    @property
    def estimated_positions(self) -> np.ndarray:
        return self.array[:, 8:11]

    @property
    def final_position(self) -> np.ndarray:
        return self.true_positions[-1]

    @property
    def duration(self) -> float:
        return float(self.array[-1, 0]) if self.rows else 0.0

    @property
    def landing_error(self) -> float:
        """Horizontal distance from the final true position to the pad center."""
        if self.pad is None:
            raise ValueError("mission has no landing pad")
        return float(np.linalg.norm(self.final_position[:2] - np.asarray(self.pad)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row[:-1]] + [row[-1]])


def _body_rate(q0: np.ndarray, q1: np.ndarray, dt: float) -> np.ndarray:
    r0 = Rotation.from_quat(q0, scalar_first=True)
    r1 = Rotation.from_quat(q1, scalar_first=True)
    return (r0.inv() * r1).as_rotvec() / dt


def fly(mission: Mission, estimator, world: WorldSpec = WorldSpec(), seed: int = 0,
        sensors: SensorSpec = SensorSpec(), gains: PidGains = PidGains(),
        params: VehicleParams = VehicleParams()) -> FlightLog:
    """Run the closed loop at the IMU rate until touchdown, ground contact or timeout.

    Estimators with ``every_step`` update at every control step; the others
    update at camera rate from a rendered frame plus the IMU window since the
    last frame, and between updates the held estimate is extrapolated with the
    estimator's velocity.
    """
    dt = 1.0 / sensors.imu_rate
    ratio = sensors.imu_rate // sensors.camera_rate
    rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    accel_bias = rng.normal(0.0, 1.0, 3) * sensors.accel_bias_sigma
    gyro_bias = rng.normal(0.0, 1.0, 3) * sensors.gyro_bias_sigma

    state = VehicleState(mission.start, attitude=np.array([mission.yaw, 0.0, 0.0]))
    controller = PidController(gains, params, mission.yaw)
    estimator.reset(state)
    log = FlightLog(dt=dt, pad=mission.pad)
    estimate, est_vel, est_time = state.pose, np.zeros(3), 0.0
    imu_t, imu_acc, imu_gyro = [], [], []
    corrupted = False
    steps = int(round(mission.timeout / dt))
    try:
        for k in range(steps):
            t = k * dt
            if k and estimator.every_step:
                estimate, est_vel = estimator.update(state, None)
                est_time = t
            elif k and k % ratio == 0:
                frame = render_frame(world, state.pose.with_timestamp(t), sensors.image_shape)
                corrupted = bool(rng.random() < sensors.corrupt_fraction)
                if corrupted:
                    frame = Frame(np.zeros_like(frame.pixels), frame.timestamp, corrupted=True)
                    log.corrupted_frames += 1
                if frame_is_corrupted(frame, CORRUPTION_VARIANCE):
                    log.imu_only_steps += 1
                window = ImuWindow(np.array(imu_t), np.array(imu_acc), np.array(imu_gyro), (k - ratio) * dt, t)
                imu_t, imu_acc, imu_gyro = [], [], []
                estimate, est_vel = estimator.update(state, Observation(frame, window, None))
                est_time = t
            held = Pose(estimate.position + est_vel * (t - est_time), estimate.orientation, t)
            target = guidance(held, mission, t)
            cmd = controller(held, est_vel, target, dt)
            log.append(t, state, held, target, cmd, corrupted)

            nxt, acc = dynamics_step(state, cmd, dt, params)
            specific = attitude_matrix(*nxt.attitude).T @ (acc + params.gravity * E_Z)
            imu_t.append(t)
            imu_acc.append(specific + accel_bias + rng.normal(0.0, sensors.accel_noise, 3))
            imu_gyro.append(_body_rate(state.orientation, nxt.orientation, dt) + gyro_bias
                            + rng.normal(0.0, sensors.gyro_noise, 3))
            state = nxt

            if target.phase == "landing" and (state.position[2] <= mission.pad_z + mission.touchdown_height
                                              and -state.velocity[2] < mission.touchdown_speed):
                log.touchdown = True
                log.touchdown_time = state.time
                log.append(state.time, state, held, target, cmd, corrupted)
                break
            if state.position[2] <= params.ground_z:
                # the camera cannot see from the ground, so an early crash ends the flight
                log.aborted = f"ground contact at t={state.time:.2f} s during {target.phase}"
                log.append(state.time, state, held, target, cmd, corrupted)
                break
    except NumericFault as exc:
        log.aborted = str(exc)
        raise
    return log


# ---------------------------------------------------------------- open-loop evaluation

class PassthroughRegressor:
    """Emits the ground truth; a reference for the evaluation plumbing."""

    corruption_threshold = CORRUPTION_VARIANCE

    def predict_online(self, X):
        truth = X.ground_truth()
        mask = np.array([frame_is_corrupted(o.frame, self.corruption_threshold) for o in X], dtype=bool)
        return truth, mask


@dataclass
class OpenLoopReport:
    trans_rmse_m: float
    rot_rmse_rad: float
    corrupted_trans_rmse_m: float
    clean_trans_rmse_m: float
    n_observations: int
    n_corrupted: int
    imu_only_steps: int
    estimates: Trajectory
    truth: Trajectory

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("trans_rmse_m", "rot_rmse_rad", "corrupted_trans_rmse_m",
                                              "clean_trans_rmse_m", "n_observations", "n_corrupted",
                                              "imu_only_steps")}

    def to_text(self) -> str:
        return "".join(f"{k} = {v!r}\n" for k, v in self.to_dict().items())


def evaluate_open_loop(ds, regressor) -> OpenLoopReport:
    """Replay ``ds`` through the online loop and score the self-fed estimates."""
    from .estimator import rotation_rmse
    from .validation import check_dataset

    check_dataset(ds, require_ground_truth=True)
    estimates, mask = regressor.predict_online(ds)
    truth = ds.ground_truth()
    flagged = np.array([o.frame.corrupted for o in ds], dtype=bool)
    err = np.linalg.norm(estimates.positions - truth.positions, axis=1)

    def subset(m):
        return float(np.sqrt(np.mean(err[m] ** 2))) if m.any() else float("nan")

    return OpenLoopReport(
        trans_rmse_m=rmse(estimates.positions, truth.positions),
        rot_rmse_rad=rotation_rmse(estimates, truth),
        corrupted_trans_rmse_m=subset(flagged),
        clean_trans_rmse_m=subset(~flagged),
        n_observations=len(ds), n_corrupted=int(flagged.sum()), imu_only_steps=int(mask.sum()),
        estimates=estimates, truth=truth,
    )


def make_estimator(kind: str, checkpoint=None, world: WorldSpec = WorldSpec(), seed: int = 0,
                   image_width: int = 64, altitude: float = 3.0):
    if kind == "truth":
        return TruthEstimator()
    if kind == "kf":
        return KalmanEstimator(pixel_noise_sigma(world, altitude, image_width), seed=seed)
    if kind == "learned":
        from .estimator import FusionPoseRegressor
        if checkpoint is None:
            raise ValueError("the learned estimator needs a checkpoint")
        return LearnedEstimator(FusionPoseRegressor.load(checkpoint))
    raise ValueError(f"unknown estimator {kind!r}")
