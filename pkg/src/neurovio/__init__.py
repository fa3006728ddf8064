"""Learned visual-inertial odometry with Kalman bounds and closed-loop landing."""

__version__ = "0.1.0"
