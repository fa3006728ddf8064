"""Linear Gaussian filtering: KF recursions, Riccati iteration and the steady-state bound.

Conventions: ``riccati_iterate`` and ``riccati_steady_state`` work on the
*prior* (predicted) covariance ``P_{t+1|t}``. The error of the filtered
estimate is described by the posterior covariance, available through
:func:`posterior_covariance`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .exceptions import DimensionError, NonConvergenceError, SingularMatrixError
from .geometry import Pose, Trajectory
from .validation import check_aligned

REPORT_COLUMNS = ["timestamp_s", "kf_err_m", "ml_err_m", "kf_steady_std_m"]


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class KalmanModel:
    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A, H, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.H, self.Q, self.R))
        n, m = A.shape[0], H.shape[0]
        if A.shape != (n, n) or H.shape != (m, n) or Q.shape != (n, n) or R.shape != (m, m):
            raise DimensionError(f"inconsistent shapes A{A.shape} H{H.shape} Q{Q.shape} R{R.shape}")
        for name, M in (("Q", Q), ("R", R)):
            if not np.allclose(M, M.T, atol=1e-12):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12:
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0:
            raise ValueError("R must be positive definite")
        for name, M in zip("AHQR", (A, H, Q, R)):
            object.__setattr__(self, name, M)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_measurements(self) -> int:
        return self.H.shape[0]


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray
    gain: np.ndarray | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        P = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        n = self.mean.size
        if P.shape != (n, n):
            raise DimensionError(f"covariance shape {P.shape} does not match mean of size {n}")
        object.__setattr__(self, "covariance", P)


def _gain(model: KalmanModel, P: np.ndarray) -> np.ndarray:
    """``K = P H^T S^-1`` through a Cholesky solve on the innovation covariance."""
    S = model.H @ P @ model.H.T + model.R
    try:
        factor = cho_factor(_symmetrize(S))
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("innovation covariance S = H P H^T + R is not positive definite") from exc
    return cho_solve(factor, model.H @ P).T


def kf_predict(model: KalmanModel, state: KalmanState) -> KalmanState:
    P = _symmetrize(model.A @ state.covariance @ model.A.T + model.Q)
    return KalmanState(model.A @ state.mean, P, state.gain)


def kf_update(model: KalmanModel, state: KalmanState, measurement) -> KalmanState:
    y = np.asarray(measurement, dtype=float).reshape(-1)
    if y.size != model.n_measurements:
        raise DimensionError(f"measurement has {y.size} entries, model expects {model.n_measurements}")
    P = state.covariance
    K = _gain(model, P)
    mean = state.mean + K @ (y - model.H @ state.mean)
    P = _symmetrize(P - K @ model.H @ P)
    return KalmanState(mean, P, K)


def kf_step(model: KalmanModel, state: KalmanState, measurement) -> KalmanState:
    """Predict from the previous posterior, then update with ``measurement``."""
    return kf_update(model, kf_predict(model, state), measurement)


def riccati_step(model: KalmanModel, P: np.ndarray) -> np.ndarray:
    A, H = model.A, model.H
    K = _gain(model, P)
    return _symmetrize(A @ (P - K @ H @ P) @ A.T + model.Q)


def riccati_iterate(model: KalmanModel, P0, steps: int) -> np.ndarray:
    """``[steps + 1, n, n]`` prior covariances starting with ``P0``."""
    P = np.atleast_2d(np.asarray(P0, dtype=float))
    out = [P]
    for _ in range(int(steps)):
        P = riccati_step(model, P)
        out.append(P)
    return np.stack(out)


def riccati_steady_state(model: KalmanModel, tol: float = 1e-12, max_iter: int = 100_000,
                         P0=None) -> tuple[np.ndarray, int]:
    """Fixed-point iteration of the Riccati map; returns ``(P, iterations)``."""
    P = np.zeros_like(model.A) if P0 is None else np.atleast_2d(np.asarray(P0, dtype=float))
    residual = np.inf
    for k in range(1, int(max_iter) + 1):
        nxt = riccati_step(model, P)
        residual = float(np.max(np.abs(nxt - P)))
        P = nxt
        if residual < tol:
            return P, k
    raise NonConvergenceError(f"Riccati iteration did not converge in {max_iter} steps "
                              f"(last residual {residual:.3e})", residual)


def riccati_residual(model: KalmanModel, P) -> float:
    return float(np.max(np.abs(riccati_step(model, P) - P)))


def posterior_covariance(model: KalmanModel, P_prior) -> np.ndarray:
    K = _gain(model, P_prior)
    return _symmetrize(P_prior - K @ model.H @ P_prior)


def range_measurement(sensor, target, noise_sigma: float, rng=None) -> float:
    """Distance from ``sensor`` to ``target`` plus zero-mean Gaussian noise."""
    d = float(np.linalg.norm(np.asarray(sensor, dtype=float) - np.asarray(target, dtype=float)))
    if noise_sigma == 0:
        return d
    return d + float(np.random.default_rng(rng).normal(0.0, noise_sigma))


def constant_velocity_model(dt: float, accel_sigma: float, meas_sigma: float, axes: int = 3) -> KalmanModel:
    """Per-axis double integrator with white-acceleration noise; state ``[p (axes), v (axes)]``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    eye = np.eye(axes)
    A = np.kron(np.array([[1.0, dt], [0.0, 1.0]]), eye)
    Q = accel_sigma ** 2 * np.kron(np.array([[dt ** 4 / 4, dt ** 3 / 2], [dt ** 3 / 2, dt ** 2]]), eye)
    H = np.hstack([eye, np.zeros((axes, axes))])
    return KalmanModel(A, H, Q, meas_sigma ** 2 * eye)


def pixel_noise_sigma(world, altitude: float, width: int, pixels: float = 1.0) -> float:
    """Measurement noise in meters for a ``pixels``-sized image error at ``altitude``."""
    return pixels * world.ground_sample_distance(altitude, width)


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    # Q is often rank deficient, so Cholesky is not an option
    vals, vecs = np.linalg.eigh(M)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def simulate_linear(model: KalmanModel, x0, steps: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``steps`` states after ``x0`` and their measurements."""
    rng = np.random.default_rng(rng)
    n, m = model.n_states, model.n_measurements
    Lq = _psd_sqrt(model.Q)
    Lr = np.linalg.cholesky(model.R)
    x = np.asarray(x0, dtype=float)
    states, meas = [], []
    for _ in range(int(steps)):
        x = model.A @ x + Lq @ rng.standard_normal(n)
        states.append(x)
        meas.append(model.H @ x + Lr @ rng.standard_normal(m))
    return np.array(states), np.array(meas)


def run_filter(model: KalmanModel, state: KalmanState, measurements) -> list[KalmanState]:
    out = []
    for y in measurements:
        state = kf_step(model, state, y)
        out.append(state)
    return out


def monte_carlo_error_std(model: KalmanModel, runs: int, steps: int, burn_in: int, seed: int = 0,
                          initial_std: float = 1.0, predicted: bool = False) -> np.ndarray:
    """Empirical per-state std of the estimation error, pooled over steps after ``burn_in``.

    The error is that of the filtered estimate, or with ``predicted`` that of
    the one-step prediction made before each measurement arrives.
    """
    ss = np.random.SeedSequence(seed)
    errors = []
    n = model.n_states
    for child in ss.spawn(int(runs)):
        rng = np.random.default_rng(child)
        x0 = initial_std * rng.standard_normal(n)
        truth, meas = simulate_linear(model, x0, steps, rng)
        est = run_filter(model, KalmanState(np.zeros(n), initial_std ** 2 * np.eye(n)), meas)
        means = np.array([s.mean for s in est])
        if predicted:
            means = np.vstack([np.zeros((1, n)), means[:-1]]) @ model.A.T
        errors.append(means[burn_in:] - truth[burn_in:])
    return np.concatenate(errors).std(axis=0)


@dataclass
class BoundReport:
    timestamps: np.ndarray
    kf_errors: np.ndarray
    ml_errors: np.ndarray
    steady_std: np.ndarray
    steady_prior: np.ndarray
    steady_posterior: np.ndarray
    kf_estimates: Trajectory

    @property
    def steady_radial_std(self) -> float:
        return float(np.sqrt(np.sum(self.steady_std ** 2)))

    @property
    def kf_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.kf_errors ** 2)))

    @property
    def ml_rmse(self) -> float:
        return float(np.sqrt(np.mean(self.ml_errors ** 2)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(REPORT_COLUMNS)
            for t, kf, ml in zip(self.timestamps, self.kf_errors, self.ml_errors):
                writer.writerow([repr(float(t)), repr(float(kf)), repr(float(ml)),
                                 repr(self.steady_radial_std)])

    def summary(self) -> str:
        diag = np.diag(self.steady_posterior)
        lines = [
            "steady-state posterior P diagonal: " + " ".join(f"{v:.6g}" for v in diag),
            "steady-state position std per axis (m): " + " ".join(f"{v:.6g}" for v in self.steady_std),
            f"steady-state position std, radial (m): {self.steady_radial_std:.6g}",
            f"KF RMSE (m): {self.kf_rmse:.6g}",
            f"ML RMSE (m): {self.ml_rmse:.6g}",
            f"ML / KF-bound ratio: {self.ml_rmse / self.steady_radial_std:.4g}",
        ]
        return "\n".join(lines) + "\n"


def bound_report(model: KalmanModel, trajectory: Trajectory, ml_estimates: Trajectory,
                 seed: int = 0) -> BoundReport:
    """Filter noisy position fixes of ``trajectory`` and compare the errors with ``ml_estimates``.

    Measurements are drawn from the model's ``R`` with ``seed``. The filter
    starts at the first fix with the measurement covariance on position and a
    unit variance on velocity.
    """
    check_aligned(trajectory, ml_estimates)
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    truth = trajectory.positions
    axes = truth.shape[1]
    if model.n_measurements != axes or model.n_states != 2 * axes:
        raise DimensionError("bound_report expects a constant-velocity model over the trajectory axes")
    rng = np.random.default_rng(seed)
    Lr = np.linalg.cholesky(model.R)
    meas = truth + rng.standard_normal(truth.shape) @ Lr.T

    P0 = np.zeros((2 * axes, 2 * axes))
    P0[:axes, :axes] = model.R
    P0[axes:, axes:] = np.eye(axes)
    state = KalmanState(np.concatenate([meas[0], np.zeros(axes)]), P0)
    estimates = [state.mean[:axes]]
    for y in meas[1:]:
        state = kf_step(model, state, y)
        estimates.append(state.mean[:axes])
    estimates = np.array(estimates)

    P_prior, _ = riccati_steady_state(model)
    P_post = posterior_covariance(model, P_prior)
    kf_traj = Trajectory(Pose(p, pose.orientation, pose.timestamp) for p, pose in zip(estimates, trajectory))
    return BoundReport(
        timestamps=trajectory.timestamps,
        kf_errors=np.linalg.norm(estimates - truth, axis=1),
        ml_errors=np.linalg.norm(ml_estimates.positions - truth, axis=1),
        steady_std=np.sqrt(np.diag(P_post)[:axes]),
        steady_prior=P_prior,
        steady_posterior=P_post,
        kf_estimates=kf_traj,
    )


__all__ = [
    "BoundReport", "KalmanModel", "KalmanState", "bound_report", "constant_velocity_model",
    "kf_predict", "kf_step", "kf_update", "monte_carlo_error_std", "pixel_noise_sigma",
    "posterior_covariance", "range_measurement", "riccati_iterate", "riccati_residual",
    "riccati_steady_state", "riccati_step", "run_filter", "simulate_linear",
]
