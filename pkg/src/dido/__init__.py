"""Quadrotor inertial-dynamical odometry toolkit.

A physics-consistent flight simulator, a two-stage error-state EKF fusing
de-biased IMU, rotor-speed dynamics and velocity/position observations,
tiny-network forward inference with training losses, and trajectory metrics.
"""

__version__ = "0.1.0"

from .geom import UnitQuaternion, quat_mul, quat_exp, quat_log, integrate_gyro, rotate, skew

__all__ = [
    "UnitQuaternion",
    "quat_mul",
    "quat_exp",
    "quat_log",
    "integrate_gyro",
    "rotate",
    "skew",
]
