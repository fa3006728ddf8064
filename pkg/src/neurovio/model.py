"""Visual-inertial fusion network and its pose loss.

Pipeline per observation: a residual CNN turns the frame into a visual
feature, a small LSTM folds the IMU window into an inertial feature, the two
are concatenated with the encoded previous pose and fed to the core LSTM,
whose hidden state goes through a wide ReLU layer into a 3-d translation
head and a 4-d raw quaternion head.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .dataio.dataset import Frame, ImuWindow, Observation
from .exceptions import DegenerateQuaternionError, DimensionError, EmptyInputError
from .geometry import Pose, quat_normalize
from .nn import layers as L
from .nn.layers import LstmParams, LstmState
from .nn.tensor import Parameter, Tensor, concat, exp, getitem, l1_norm, norm, relu, stack

CORRUPTION_VARIANCE = 1e-6


@dataclass
class FusionConfig:
    image_shape: tuple = (36, 64, 1)
    visual_feature_dim: int = 64
    inertial_hidden: int = 32
    inertial_feature_dim: int = 32
    core_hidden: int = 128
    head_hidden: int = 1024
    gamma: float = 0.5
    loss_mode: str = "sigma"
    beta: float = 500.0
    stem_channels: int = 8
    block_channels: tuple = (16, 32, 32)
    s_x_init: float = 0.0
    s_q_init: float = -3.0
    visual_aux_weight: float = 0.0

    def __post_init__(self):
        self.image_shape = tuple(int(v) for v in self.image_shape)
        self.block_channels = tuple(int(v) for v in self.block_channels)
        dims = (self.visual_feature_dim, self.inertial_hidden, self.inertial_feature_dim,
                self.core_hidden, self.head_hidden, self.stem_channels, *self.block_channels,
                *self.image_shape)
        if any(d <= 0 for d in dims):
            raise ValueError("all network dimensions must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if self.visual_aux_weight < 0:
            raise ValueError("visual_aux_weight must be non-negative")
        if self.loss_mode not in ("sigma", "beta"):
            raise ValueError(f"loss_mode must be 'sigma' or 'beta', got {self.loss_mode!r}")
        if self.loss_mode == "beta" and self.beta < 0:
            raise ValueError("beta must be non-negative")

    @property
    def fused_dim(self) -> int:
        return self.visual_feature_dim + self.inertial_feature_dim

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FeatureVector:
    values: Tensor
    kind: str


@dataclass
class LossWeights:
    s_x: Parameter
    s_q: Parameter


@dataclass
class RawPose:
    """Un-normalized head outputs: translation ``[..., 3]`` and quaternion ``[..., 4]``."""

    translation: Tensor
    quaternion: Tensor
    # position read straight off the visual features of clean frames, when enabled
    visual_translation: Tensor | None = None
    visual_steps: list | None = None


@dataclass
class LossTerms:
    total: Tensor
    position: Tensor
    rotation: Tensor
    visual: Tensor | None = None


def frame_is_corrupted(frame: Frame, threshold: float = CORRUPTION_VARIANCE) -> bool:
    """Pixel-only corruption test: near-constant frames carry no visual information."""
    return float(np.var(frame.pixels)) < threshold


def pose_loss(pred: RawPose, truth_position, truth_quaternion, weights: LossWeights | None,
              config: FusionConfig) -> LossTerms:
    """Combined L2 + gamma * L1 pose loss, either beta-weighted or with learned log-variances.

    ``truth_*`` may carry a leading time axis; per-step terms are averaged.
    The quaternion term compares the *raw* head output against the unit
    ground-truth quaternion.
    """
    tq = np.asarray(truth_quaternion, dtype=float)
    qn = np.linalg.norm(tq, axis=-1, keepdims=True)
    if np.any(qn <= 1e-12):
        raise DegenerateQuaternionError("ground-truth quaternion has zero norm")
    dx = pred.translation - np.asarray(truth_position, dtype=float)
    dq = pred.quaternion - tq / qn
    gamma = config.gamma
    lx = norm(dx) + gamma * l1_norm(dx) if gamma else norm(dx)
    lq = norm(dq) + gamma * l1_norm(dq) if gamma else norm(dq)
    lx, lq = lx.mean(), lq.mean()
    if config.loss_mode == "beta":
        total = lx + config.beta * lq
    else:
        if weights is None:
            raise ValueError("learned-sigma loss needs LossWeights")
        total = lx * exp(-weights.s_x) + weights.s_x + lq * exp(-weights.s_q) + weights.s_q
    return LossTerms(total, lx, lq)


class FusionNet:
    """Parameters plus forward passes of the fusion model.

    Normalization statistics (position, IMU channels) are set from training
    data and travel with the checkpoint. The position statistics both
    standardize the previous-pose input and de-standardize the translation
    head.
    """

    def __init__(self, config: FusionConfig | None = None, seed: int = 0):
        self.config = config or FusionConfig()
        self.params: OrderedDict[str, Parameter] = OrderedDict()
        self.pos_mean = np.zeros(3)
        self.pos_std = np.ones(3)
        self.imu_mean = np.zeros(6)
        self.imu_std = np.ones(6)
        self._build(np.random.default_rng(seed))

    # ------------------------------------------------------------ parameters

    def _add(self, param: Parameter) -> Parameter:
        self.params[param.name] = param
        return param

    def _conv(self, rng, name, k, cin, cout):
        return self._add(L.uniform_init(rng, (k, k, cin, cout), k * k * cin, name))

    def _norm(self, name, n):
        self._add(Parameter(np.ones(n), f"{name}.gain"))
        self._add(Parameter(np.zeros(n), f"{name}.shift"))

    def _dense(self, rng, name, n_in, n_out, bias=None):
        self._add(L.uniform_init(rng, (n_in, n_out), n_in, f"{name}.weight"))
        self._add(Parameter(np.zeros(n_out) if bias is None else bias, f"{name}.bias"))

    def _lstm(self, rng, name, n_in, n_hidden):
        for p in LstmParams.init(n_in, n_hidden, rng, name).parameters():
            self._add(p)

    def _build(self, rng):
        cfg = self.config
        cin = cfg.image_shape[2]
        self._conv(rng, "visual.stem.conv", 3, cin, cfg.stem_channels)
        self._norm("visual.stem.norm", cfg.stem_channels)
        prev = cfg.stem_channels
        for b, width in enumerate(cfg.block_channels):
            name = f"visual.block{b}"
            self._conv(rng, f"{name}.conv1", 3, prev, width)
            self._norm(f"{name}.norm1", width)
            self._conv(rng, f"{name}.conv2", 3, width, width)
            self._norm(f"{name}.norm2", width)
            self._conv(rng, f"{name}.skip", 1, prev, width)
            self._norm(f"{name}.skip_norm", width)
            prev = width
        self._dense(rng, "visual.fc1", prev, cfg.visual_feature_dim)
        self._dense(rng, "visual.fc2", cfg.visual_feature_dim, cfg.visual_feature_dim)
        self._add(Parameter(np.zeros(cfg.visual_feature_dim), "visual.placeholder"))
        if cfg.visual_aux_weight > 0:
            self._dense(rng, "visual.aux", cfg.visual_feature_dim, 3)

        self._lstm(rng, "inertial.lstm", 7, cfg.inertial_hidden)
        self._dense(rng, "inertial.fc", cfg.inertial_hidden, cfg.inertial_feature_dim)

        self._lstm(rng, "core.lstm", cfg.fused_dim + 7, cfg.core_hidden)
        self._dense(rng, "head.fc", cfg.core_hidden, cfg.head_hidden)
        self._dense(rng, "head.translation", cfg.head_hidden, 3)
        self._dense(rng, "head.rotation", cfg.head_hidden, 4, bias=np.array([1.0, 0.0, 0.0, 0.0]))

        self._add(Parameter(np.array(cfg.s_x_init), "loss.s_x"))
        self._add(Parameter(np.array(cfg.s_q_init), "loss.s_q"))

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def trainable(self) -> list[Parameter]:
        """Parameters the optimizer updates; log-variances only in learned-sigma mode."""
        if self.config.loss_mode == "sigma":
            return self.parameters()
        return [p for n, p in self.params.items() if not n.startswith("loss.")]

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.params["loss.s_x"], self.params["loss.s_q"])

    def _lstm_params(self, name) -> LstmParams:
        p = self.params
        return LstmParams(p[f"{name}.w_input"], p[f"{name}.w_hidden"], p[f"{name}.bias"])

    def _fc(self, x, name):
        return L.dense(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])

    def _ln(self, x, name):
        return L.normalize_layer(x, self.params[f"{name}.gain"], self.params[f"{name}.shift"])

    def state_dict(self) -> OrderedDict:
        return OrderedDict((k, v.data.copy()) for k, v in self.params.items())

    def load_state_dict(self, values) -> None:
        missing = set(self.params) - set(values)
        if missing:
            raise KeyError(f"checkpoint missing parameters: {sorted(missing)}")
        for name, param in self.params.items():
            arr = np.asarray(values[name], dtype=float)
            if arr.shape != param.shape:
                raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model {param.shape}")
            param.data = arr.copy()
            param.zero_grad()

    def n_parameters(self, prefix: str = "") -> int:
        return int(sum(p.size for n, p in self.params.items() if n.startswith(prefix)))

    # ------------------------------------------------------------ encoders

    def encode_visual_batch(self, pixels) -> Tensor:
        """``[B, H, W, C]`` images to ``[B, visual_feature_dim]`` features."""
        cfg = self.config
        x = Tensor(np.asarray(pixels, dtype=float))
        if tuple(x.shape[1:]) != cfg.image_shape:
            raise DimensionError(f"frame shape {x.shape[1:]} != configured {cfg.image_shape}")
        p = self.params
        x = relu(self._ln(L.conv2d(x, p["visual.stem.conv"], 1, 1), "visual.stem.norm"))
        for b in range(len(cfg.block_channels)):
            name = f"visual.block{b}"
            y = relu(self._ln(L.conv2d(x, p[f"{name}.conv1"], 2, 1), f"{name}.norm1"))
            y = self._ln(L.conv2d(y, p[f"{name}.conv2"], 1, 1), f"{name}.norm2")
            skip = self._ln(L.conv2d(x, p[f"{name}.skip"], 2, 0), f"{name}.skip_norm")
            x = relu(y + skip)
        pooled = L.global_avg_pool(x)
        return self._fc(relu(self._fc(pooled, "visual.fc1")), "visual.fc2")

    def encode_visual(self, frame: Frame) -> FeatureVector:
        if frame.corrupted:
            raise ValueError("corrupted frame: route through the IMU-only path")
        z = self.encode_visual_batch(frame.pixels[None])
        return FeatureVector(getitem(z, 0), "visual")

    def imu_inputs(self, window: ImuWindow) -> np.ndarray:
        """``[N, 7]`` LSTM inputs: standardized accel and gyro plus intra-window time in [0, 1)."""
        if len(window) == 0:
            raise EmptyInputError("IMU window is empty")
        span = window.t_end - window.t_start
        tau = (window.timestamps - window.t_start) / span if span > 0 else np.zeros(len(window))
        raw = np.hstack([window.accel, window.gyro])
        return np.hstack([(raw - self.imu_mean) / self.imu_std, tau[:, None]])

    def encode_inertial_batch(self, windows: Sequence[ImuWindow]) -> Tensor:
        """Windows of equal length share one batched LSTM pass; others run individually."""
        if not windows:
            raise EmptyInputError("no IMU windows")
        lengths = {len(w) for w in windows}
        lstm = self._lstm_params("inertial.lstm")
        hidden = self.config.inertial_hidden
        if len(lengths) == 1:
            inputs = np.stack([self.imu_inputs(w) for w in windows])
            _, state = L.lstm_sequence(inputs, LstmState.zeros(hidden, len(windows)), lstm)
            return self._fc(state.hidden, "inertial.fc")
        rows = []
        for w in windows:
            _, state = L.lstm_sequence(self.imu_inputs(w), LstmState.zeros(hidden), lstm)
            rows.append(state.hidden)
        return self._fc(stack(rows), "inertial.fc")

    def encode_inertial(self, window: ImuWindow) -> FeatureVector:
        return FeatureVector(getitem(self.encode_inertial_batch([window]), 0), "inertial")

    def encode_pose(self, pose: Pose) -> np.ndarray:
        return np.concatenate([(pose.position - self.pos_mean) / self.pos_std, pose.orientation])

    # ------------------------------------------------------------ core

    def fused_features(self, frames: Sequence[Frame | None], windows: Sequence[ImuWindow]) -> Tensor:
        """``[T, fused_dim]`` features; ``None`` frames use the learned visual placeholder."""
        return self._fuse(frames, windows)[0]

    def _fuse(self, frames, windows):
        clean = [i for i, f in enumerate(frames) if f is not None]
        rows: list = [None] * len(frames)
        z_v = None
        if clean:
            z_v = self.encode_visual_batch(np.stack([frames[i].pixels for i in clean]))
            for j, i in enumerate(clean):
                rows[i] = getitem(z_v, j)
        placeholder = self.params["visual.placeholder"]
        z_v_all = stack([r if r is not None else placeholder for r in rows])
        z_i = self.encode_inertial_batch(windows)
        return concat([z_v_all, z_i], axis=-1), z_v, clean

    def visual_position(self, z_v: Tensor) -> Tensor:
        """Auxiliary position readout from visual features (training signal only)."""
        return self._fc(z_v, "visual.aux") * self.pos_std + self.pos_mean

    def core_step(self, fused_row: Tensor, prev_encoding, state: LstmState):
        core_in = concat([fused_row, Tensor(prev_encoding)], axis=-1)
        return L.lstm_step(core_in, state, self._lstm_params("core.lstm"))

    def heads(self, hidden: Tensor) -> RawPose:
        h = relu(self._fc(hidden, "head.fc"))
        translation = self._fc(h, "head.translation") * self.pos_std + self.pos_mean
        return RawPose(translation, self._fc(h, "head.rotation"))

    def forward_sequence(self, observations: Sequence[Observation], prev_poses: Sequence[Pose],
                         state: LstmState | None = None, route: Sequence[bool] | None = None,
                         feedback: Sequence[bool] | None = None):
        """Pass over a chunk; ``prev_poses[t]`` feeds step ``t``.

        ``route[t]`` true sends step ``t`` through the IMU-only branch.
        ``feedback[t]`` true (for ``t >= 1``) replaces ``prev_poses[t]`` with
        the network's own detached estimate from step ``t - 1``. Returns the
        stacked raw heads and the final core state.
        """
        if route is None:
            route = [frame_is_corrupted(o.frame) for o in observations]
        frames = [None if r else o.frame for o, r in zip(observations, route)]
        fused, z_v, clean = self._fuse(frames, [o.imu for o in observations])
        aux = {}
        if z_v is not None and self.config.visual_aux_weight > 0:
            aux = {"visual_translation": self.visual_position(z_v), "visual_steps": clean}
        state = state or LstmState.zeros(self.config.core_hidden)
        if feedback is None or not any(feedback[1:]):
            hiddens = []
            for t, prev in enumerate(prev_poses):
                h, state = self.core_step(getitem(fused, t), self.encode_pose(prev), state)
                hiddens.append(h)
            raw = self.heads(stack(hiddens))
            return RawPose(raw.translation, raw.quaternion, **aux), state
        translations, quaternions = [], []
        estimate = None
        for t, obs in enumerate(observations):
            prev = estimate if (t and feedback[t]) else prev_poses[t]
            h, state = self.core_step(getitem(fused, t), self.encode_pose(prev), state)
            raw = self.heads(h)
            translations.append(raw.translation)
            quaternions.append(raw.quaternion)
            estimate = self._finish(raw, prev, obs.timestamp)
        return RawPose(stack(translations), stack(quaternions), **aux), state

    def _finish(self, raw: RawPose, prev_pose: Pose, timestamp: float) -> Pose:
        q = raw.quaternion.data.reshape(4)
        try:
            q = quat_normalize(q)
        except DegenerateQuaternionError:
            q = prev_pose.orientation
        return Pose(raw.translation.data.reshape(3), q, timestamp)

    def predict(self, obs: Observation, prev_pose: Pose, core_state: LstmState | None = None,
                corrupted: bool | None = None) -> tuple[Pose, LstmState, RawPose]:
        """One step of online estimation; corrupted frames fall back to the IMU-only path."""
        if corrupted is None:
            corrupted = frame_is_corrupted(obs.frame)
        if corrupted:
            return self.predict_imu_only(obs.imu, prev_pose, core_state, obs.timestamp)
        fused = self.fused_features([obs.frame], [obs.imu])
        return self._step(fused, prev_pose, core_state, obs.timestamp)

    def predict_imu_only(self, window: ImuWindow, prev_pose: Pose, core_state: LstmState | None = None,
                         timestamp: float | None = None) -> tuple[Pose, LstmState, RawPose]:
        fused = self.fused_features([None], [window])
        return self._step(fused, prev_pose, core_state, window.t_end if timestamp is None else timestamp)

    def _step(self, fused, prev_pose, core_state, timestamp):
        state = core_state or LstmState.zeros(self.config.core_hidden)
        h, state = self.core_step(getitem(fused, 0), self.encode_pose(prev_pose), state)
        raw = self.heads(h)
        return self._finish(raw, prev_pose, timestamp), state.detach(), raw

    def loss(self, raw: RawPose, truths: Sequence[Pose]) -> LossTerms:
        pos = np.array([p.position for p in truths])
        quat = np.array([p.orientation for p in truths])
        terms = pose_loss(raw, pos, quat, self.loss_weights, self.config)
        if raw.visual_translation is None:
            return terms
        visual = norm(raw.visual_translation - pos[raw.visual_steps]).mean()
        total = terms.total + self.config.visual_aux_weight * visual
        return LossTerms(total, terms.position, terms.rotation, visual)
