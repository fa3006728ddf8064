"""Scikit-learn style wrapper around :class:`~neurovio.model.FusionNet`."""

from __future__ import annotations

import csv
import logging

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .dataio.dataset import Dataset
from .exceptions import NumericFault
from .geometry import Pose, Trajectory, rmse
from .model import CORRUPTION_VARIANCE, FusionConfig, FusionNet, RawPose, frame_is_corrupted
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.optim import Adam
from .nn.tensor import backward, getitem
from .runtime import OnlineEstimator
from .validation import check_dataset, check_is_fitted

logger = logging.getLogger(__name__)

LOG_COLUMNS = ["epoch", "train_loss", "val_trans_rmse_m", "val_rot_rmse_rad", "s_x", "s_q"]


def _std_floor(std: np.ndarray) -> np.ndarray:
    return np.where(std < 1e-3, 1.0, std)


def rotation_rmse(estimates: Trajectory, truth: Trajectory) -> float:
    dots = np.abs(np.sum(estimates.orientations * truth.orientations, axis=1))
    angles = 2.0 * np.arccos(np.clip(dots, 0.0, 1.0))
    return float(np.sqrt(np.mean(angles ** 2)))


class FusionPoseRegressor(RegressorMixin, BaseEstimator):
    """End-to-end visual-inertial pose regressor.

    ``fit`` trains with truncated backpropagation through time: the
    recording is cut into consecutive chunks of ``sequence_length``
    observations, processed in order, with the detached recurrent state
    carried from one chunk to the next so training sees the same state
    history as the online loop. Each step is fed the ground-truth previous
    pose with probability ``teacher_forcing`` and otherwise the network's own
    detached estimate from the step before (scheduled sampling), so with
    ``teacher_forcing < 1`` training also sees the self-fed inputs of the
    online loop. ``carry_state=False`` instead restarts the core state from
    zeros at every chunk. ``predict`` runs that loop, feeding back its own
    estimates from ``X.initial_pose`` onward.

    ``visual_aux_weight`` adds a linear position readout on the visual
    features of clean frames and weights its error into the loss. The readout
    is discarded at inference; it only keeps the CNN from being ignored in
    favour of the recurrent state.
    """

    def __init__(self, image_shape=(36, 64, 1), visual_feature_dim=64, inertial_hidden=32,
                 inertial_feature_dim=32, core_hidden=128, head_hidden=1024, gamma=0.5,
                 loss_mode="sigma", beta=500.0, s_x_init=0.0, s_q_init=-3.0,
                 learning_rate=1e-4, epochs=1, sequence_length=8, teacher_forcing=0.0,
                 carry_state=True, visual_aux_weight=1.0, corruption_threshold=CORRUPTION_VARIANCE,
                 warm_start=False, random_state=0, verbose=0):
        self.image_shape = image_shape
        self.visual_feature_dim = visual_feature_dim
        self.inertial_hidden = inertial_hidden
        self.inertial_feature_dim = inertial_feature_dim
        self.core_hidden = core_hidden
        self.head_hidden = head_hidden
        self.gamma = gamma
        self.loss_mode = loss_mode
        self.beta = beta
        self.s_x_init = s_x_init
        self.s_q_init = s_q_init
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.sequence_length = sequence_length
        self.teacher_forcing = teacher_forcing
        self.carry_state = carry_state
        self.visual_aux_weight = visual_aux_weight
        self.corruption_threshold = corruption_threshold
        self.warm_start = warm_start
        self.random_state = random_state
        self.verbose = verbose

    def _make_config(self) -> FusionConfig:
        return FusionConfig(
            image_shape=self.image_shape, visual_feature_dim=self.visual_feature_dim,
            inertial_hidden=self.inertial_hidden, inertial_feature_dim=self.inertial_feature_dim,
            core_hidden=self.core_hidden, head_hidden=self.head_hidden, gamma=self.gamma,
            loss_mode=self.loss_mode, beta=self.beta, s_x_init=self.s_x_init, s_q_init=self.s_q_init,
            visual_aux_weight=self.visual_aux_weight,
        )

    def _initialize(self, X: Dataset) -> None:
        net = FusionNet(self._make_config(), seed=self.random_state)
        positions = np.array([X.initial_pose.position] + [o.ground_truth.position for o in X])
        net.pos_mean = positions.mean(axis=0)
        net.pos_std = _std_floor(positions.std(axis=0))
        imu = np.vstack([np.hstack([o.imu.accel, o.imu.gyro]) for o in X])
        net.imu_mean = imu.mean(axis=0)
        net.imu_std = _std_floor(imu.std(axis=0))
        self.net_ = net
        self.optimizer_ = Adam(net.trainable(), lr=self.learning_rate)
        self.history_ = []
        self.n_epochs_ = 0
        self.best_val_rmse_ = np.inf
        self.best_epoch_ = None
        self.best_params_ = None

    def _sequences(self, n: int) -> list[tuple[int, int]]:
        step = int(self.sequence_length)
        if step < 1:
            raise ValueError("sequence_length must be at least 1")
        return [(s, min(s + step, n)) for s in range(0, n, step)]

    def fit(self, X: Dataset, y=None, validation: Dataset | None = None):
        """Train for ``epochs`` epochs; with ``warm_start`` the epoch counter continues."""
        check_dataset(X, require_ground_truth=True)
        if validation is not None:
            check_dataset(validation, require_ground_truth=True)
        if not (self.warm_start and hasattr(self, "net_")):
            self._initialize(X)
        net = self.net_
        if [id(p) for p in self.optimizer_.params] != [id(p) for p in net.trainable()]:
            self.optimizer_ = Adam(net.trainable(), lr=self.learning_rate)
        self.optimizer_.state.lr = self.learning_rate

        truths = [o.ground_truth for o in X]
        prevs = [X.initial_pose] + truths[:-1]
        routes = [frame_is_corrupted(o.frame, self.corruption_threshold) for o in X]
        sequences = self._sequences(len(X))
        if not 0.0 <= self.teacher_forcing <= 1.0:
            raise ValueError("teacher_forcing must lie in [0, 1]")
        step_index = 0
        for _ in range(int(self.epochs)):
            rng = np.random.default_rng([int(self.random_state), self.n_epochs_])
            totals, pos_terms, rot_terms = [], [], []
            state, estimate = None, X.initial_pose
            for lo, hi in sequences:
                feedback = list(rng.random(hi - lo) >= self.teacher_forcing)
                if not self.carry_state:
                    state = None
                fed = list(prevs[lo:hi])
                if feedback[0]:
                    fed[0] = estimate
                try:
                    raw, state = net.forward_sequence(X.observations[lo:hi], fed, state, route=routes[lo:hi],
                                                      feedback=feedback)
                    terms = net.loss(raw, truths[lo:hi])
                    self.optimizer_.zero_grad()
                    backward(terms.total)
                    self.optimizer_.step()
                except NumericFault as exc:
                    raise NumericFault("training diverged", step=step_index) from exc
                state = state.detach()
                estimate = net._finish(RawPose(getitem(raw.translation, -1), getitem(raw.quaternion, -1)),
                                       fed[-1], X.observations[hi - 1].timestamp)
                step_index += 1
                totals.append(terms.total.item())
                pos_terms.append(terms.position.item())
                rot_terms.append(terms.rotation.item())
            self.n_epochs_ += 1
            row = {
                "epoch": self.n_epochs_,
                "train_loss": float(np.mean(totals)),
                "val_trans_rmse_m": float("nan"),
                "val_rot_rmse_rad": float("nan"),
                "s_x": float(net.params["loss.s_x"].data),
                "s_q": float(net.params["loss.s_q"].data),
                "train_position_loss": float(np.mean(pos_terms)),
                "train_rotation_loss": float(np.mean(rot_terms)),
            }
            if validation is not None:
                metrics = self.evaluate(validation)
                row["val_trans_rmse_m"] = metrics["trans_rmse_m"]
                row["val_rot_rmse_rad"] = metrics["rot_rmse_rad"]
                if metrics["trans_rmse_m"] < self.best_val_rmse_:
                    self.best_val_rmse_ = metrics["trans_rmse_m"]
                    self.best_epoch_ = self.n_epochs_
                    self.best_params_ = net.state_dict()
            self.history_.append(row)
            if self.verbose:
                logger.info("epoch %d loss %.5f val %.4f m", row["epoch"], row["train_loss"],
                            row["val_trans_rmse_m"])
        return self

    def online(self, initial_pose: Pose) -> OnlineEstimator:
        check_is_fitted(self, "net_")
        return OnlineEstimator(self.net_, initial_pose, self.corruption_threshold)

    def predict_online(self, X: Dataset) -> tuple[Trajectory, np.ndarray]:
        """Self-fed estimates plus a mask of steps that took the IMU-only branch."""
        check_dataset(X)
        if X.initial_pose is None:
            raise ValueError("prediction needs the dataset's opening pose")
        runner = self.online(X.initial_pose)
        estimates = Trajectory(runner.step(obs) for obs in X)
        return estimates, runner.imu_only_mask

    def predict(self, X: Dataset) -> Trajectory:
        return self.predict_online(X)[0]

    def evaluate(self, X: Dataset) -> dict:
        check_dataset(X, require_ground_truth=True)
        est, _ = self.predict_online(X)
        truth = X.ground_truth()
        return {"trans_rmse_m": rmse(est.positions, truth.positions),
                "rot_rmse_rad": rotation_rmse(est, truth)}

    def score(self, X: Dataset, y=None) -> float:
        """Negative translation RMSE (higher is better)."""
        return -self.evaluate(X)["trans_rmse_m"]

    # ------------------------------------------------------------ persistence

    def _metadata(self) -> dict:
        net = self.net_
        fmt = lambda arr: ",".join(repr(float(v)) for v in np.ravel(arr))  # noqa: E731
        meta = {f"param.{k}": (",".join(str(x) for x in v) if isinstance(v, (tuple, list)) else repr(v))
                for k, v in self.get_params().items()}
        meta.update({
            "pos_mean": fmt(net.pos_mean), "pos_std": fmt(net.pos_std),
            "imu_mean": fmt(net.imu_mean), "imu_std": fmt(net.imu_std),
            "epochs_completed": str(self.n_epochs_),
        })
        meta.update({f"config.{k}": str(v) for k, v in net.config.to_dict().items()})
        return meta

    def save(self, path, params=None) -> None:
        check_is_fitted(self, "net_")
        save_checkpoint(path, params if params is not None else self.net_.state_dict(), self._metadata())

    @classmethod
    def load(cls, path) -> "FusionPoseRegressor":
        values, meta = load_checkpoint(path)
        kwargs = {}
        defaults = cls().get_params()
        for key, default in defaults.items():
            text = meta.get(f"param.{key}")
            if text is None:
                continue
            if isinstance(default, tuple):
                kwargs[key] = tuple(int(v) for v in text.split(","))
            else:
                kwargs[key] = _parse_literal(text)
        est = cls(**kwargs)
        net = FusionNet(est._make_config(), seed=est.random_state)
        net.load_state_dict(values)
        parse = lambda k: np.array([float(v) for v in meta[k].split(",")])  # noqa: E731
        net.pos_mean, net.pos_std = parse("pos_mean"), parse("pos_std")
        net.imu_mean, net.imu_std = parse("imu_mean"), parse("imu_std")
        est.net_ = net
        est.optimizer_ = Adam(net.trainable(), lr=est.learning_rate)
        est.n_epochs_ = int(meta.get("epochs_completed", 0))
        est.history_ = []
        est.best_val_rmse_ = np.inf
        est.best_epoch_ = None
        est.best_params_ = None
        return est

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(LOG_COLUMNS)
            for row in self.history_:
                writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]])


def _parse_literal(text: str):
    import ast
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text
