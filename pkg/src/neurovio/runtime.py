"""Online pose estimation loop (camera-corruption aware).

Each call to :meth:`OnlineEstimator.step` consumes one observation: the
frame is screened by pixel variance, clean frames go through the full
visual-inertial path and corrupted ones through the IMU-only path. The
returned estimate becomes the previous pose for the next step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio.dataset import Observation
from .geometry import Pose
from .model import CORRUPTION_VARIANCE, FusionNet, frame_is_corrupted
from .nn.layers import LstmState


@dataclass
class BranchCounts:
    visual_inertial: int = 0
    imu_only: int = 0


class OnlineEstimator:
    def __init__(self, net: FusionNet, initial_pose: Pose, threshold: float = CORRUPTION_VARIANCE):
        self.net = net
        self.threshold = threshold
        self.reset(initial_pose)

    def reset(self, initial_pose: Pose) -> None:
        self.prev_pose = initial_pose
        self.state = LstmState.zeros(self.net.config.core_hidden)
        self.counts = BranchCounts()
        self.routes: list[bool] = []

    def step(self, obs: Observation) -> Pose:
        corrupted = frame_is_corrupted(obs.frame, self.threshold)
        if corrupted:
            pose, self.state, _ = self.net.predict_imu_only(obs.imu, self.prev_pose, self.state, obs.timestamp)
            self.counts.imu_only += 1
        else:
            pose, self.state, _ = self.net.predict(obs, self.prev_pose, self.state, corrupted=False)
            self.counts.visual_inertial += 1
        self.routes.append(corrupted)
        self.prev_pose = pose
        return pose

    @property
    def imu_only_mask(self) -> np.ndarray:
        return np.array(self.routes, dtype=bool)
