"""Input validation helpers shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_is_fitted  # noqa: F401  re-exported

from .dataio.dataset import Dataset
from .exceptions import EmptyInputError, MalformedDatasetError
from .geometry import Trajectory


def check_dataset(X, *, require_ground_truth: bool = False, min_len: int = 1) -> Dataset:
    if not isinstance(X, Dataset):
        raise TypeError(f"expected a Dataset, got {type(X).__name__}")
    if len(X) < min_len:
        raise EmptyInputError(f"dataset has {len(X)} observations, need at least {min_len}")
    if require_ground_truth:
        if not X.has_ground_truth:
            raise MalformedDatasetError("dataset has observations without ground truth")
        if X.initial_pose is None:
            raise MalformedDatasetError("dataset lacks the opening ground-truth pose")
    return X


def check_aligned(a: Trajectory, b: Trajectory, atol: float = 1e-9) -> None:
    """Raise unless both trajectories carry the same timestamps."""
    if len(a) != len(b):
        raise ValueError(f"trajectory lengths differ: {len(a)} vs {len(b)}")
    if len(a) and not np.allclose(a.timestamps, b.timestamps, rtol=0.0, atol=atol):
        raise ValueError("trajectory timestamps are not aligned")


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0:
        raise ValueError(f"{name} must be positive, got {value}")
    return value
