from .dataset import (Dataset, DatasetMeta, Frame, ImuSample, ImuWindow, Observation, corrupt_frames,
                      split)
from .euroc import load_euroc_layout, save_euroc_layout
from .render import WorldSpec, render_frame
from .synthetic import FlightSpec, generate_synthetic, plan_trajectory

__all__ = [
    "Dataset", "DatasetMeta", "FlightSpec", "Frame", "ImuSample", "ImuWindow", "Observation",
    "WorldSpec", "corrupt_frames", "generate_synthetic", "load_euroc_layout", "plan_trajectory",
    "render_frame", "save_euroc_layout", "split",
]
