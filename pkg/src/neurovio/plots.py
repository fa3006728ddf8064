"""Standalone SVG figures; byte-stable for a given input."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "neurovio"
plt.rcParams["svg.fonttype"] = "none"


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def trajectory_overlay(path, truth: np.ndarray, estimate: np.ndarray, title: str = "",
                       corrupted: np.ndarray | None = None, pad=None) -> None:
    """Top view and altitude of the true and estimated positions."""
    truth, estimate = np.asarray(truth), np.asarray(estimate)
    fig, (top, side) = plt.subplots(1, 2, figsize=(9, 4))
    top.plot(truth[:, 0], truth[:, 1], label="true", color="black")
    top.plot(estimate[:, 0], estimate[:, 1], label="estimate", color="tab:red", linestyle="--")
    if corrupted is not None and np.any(corrupted):
        top.scatter(estimate[corrupted, 0], estimate[corrupted, 1], s=10, color="tab:orange",
                    label="IMU-only", zorder=3)
    if pad is not None:
        top.scatter([pad[0]], [pad[1]], marker="x", s=60, color="tab:blue", label="pad")
    top.set_xlabel("x [m]")
    top.set_ylabel("y [m]")
    top.set_aspect("equal", adjustable="datalim")
    top.legend(loc="best", fontsize=8)
    steps = np.arange(len(truth))
    side.plot(steps, truth[:, 2], color="black", label="true")
    side.plot(steps, estimate[:, 2], color="tab:red", linestyle="--", label="estimate")
    side.set_xlabel("step")
    side.set_ylabel("z [m]")
    if title:
        fig.suptitle(title)
    _save(fig, path)


def error_curves(path, x, curves: dict, xlabel: str, ylabel: str, title: str = "", logy: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, values in curves.items():
        ax.plot(x, values, label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if logy:
        ax.set_yscale("log")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    _save(fig, path)
