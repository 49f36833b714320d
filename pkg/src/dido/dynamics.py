"""Quadrotor rigid-body force model and IMU-point acceleration prediction.

Frames: G is the gravity-aligned world frame (z up, so the gravitational
acceleration is GRAVITY_W = [0, 0, -9.8] m/s^2), B is the body frame at the
center of mass, I is the IMU frame.  The extrinsics (q_IB, t_IB) map B into
I: R(q_IB) rotates B-frame vectors into I, t_IB is the position of the B
origin expressed in I.

The total driving force in B is quadratic thrust plus rotor-speed-weighted
linear drag plus a residual term:

    f_B = tau * U_ss * e3 - U_s * diag(d) @ v_B + f_res,

with U_ss = sum(u_i^2), U_s = sum(u_i) over the four (pre-scaled) rotor
speeds.  Per-rotor velocity differences are ignored (single-rigid-body
approximation), so rotor positions never appear.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geom import UnitQuaternion, rotate

G_MAG = 9.8
#: gravitational acceleration in the world frame (z up)
GRAVITY_W = np.array([0.0, 0.0, -G_MAG])
E3 = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class DynParams:
    """Mass, thrust coefficient, drag vector, and IMU<->body extrinsics."""

    mass: float = 1.0
    tau: float = 1.1
    d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q_IB: UnitQuaternion = field(default_factory=UnitQuaternion.identity)
    t_IB: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "d", np.asarray(self.d, dtype=float))
        object.__setattr__(self, "t_IB", np.asarray(self.t_IB, dtype=float))
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if self.tau <= 0.0:
            raise ValueError("thrust coefficient must be positive")
        if np.any(self.d < 0.0):
            raise ValueError("drag coefficients must be non-negative")


@dataclass(frozen=True)
class RotorSpeeds:
    """Four rotor speeds, already divided by 10,000 (numerical-stability scaling)."""

    u: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        if u.shape != (4,):
            raise ValueError("expected 4 rotor speeds")
        if np.any(u < 0.0):
            raise ValueError("rotor speeds must be non-negative")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "_u_ss", float(u @ u))
        object.__setattr__(self, "_u_s", float(u.sum()))

    @property
    def u_ss(self) -> float:
        """Sum of squared speeds (collective thrust input)."""
        return self._u_ss

    @property
    def u_s(self) -> float:
        """Sum of speeds (drag weighting input)."""
        return self._u_s

    @staticmethod
    def hover(params: DynParams) -> "RotorSpeeds":
        """Equal speeds balancing gravity: tau * U_ss = m * g."""
        ui = np.sqrt(params.mass * G_MAG / (4.0 * params.tau))
        return RotorSpeeds(np.full(4, ui))


@dataclass(frozen=True)
class ResidualForce:
    """Unmodeled body-frame force and its diagonal covariance."""

    f_res: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma2_f: np.ndarray = field(default_factory=lambda: np.full(3, 1e-12))

    def __post_init__(self):
        object.__setattr__(self, "f_res", np.asarray(self.f_res, dtype=float))
        object.__setattr__(self, "sigma2_f", np.asarray(self.sigma2_f, dtype=float))
        if np.any(self.sigma2_f <= 0.0):
            raise ValueError("residual-force variances must be positive")


def body_force(p: DynParams, u: RotorSpeeds, v_B, f_res) -> np.ndarray:
    """Total driving force in the body frame [N]."""
    v_B = np.asarray(v_B, dtype=float)
    f_res = np.asarray(f_res, dtype=float)
    return p.tau * u.u_ss * E3 - u.u_s * (p.d * v_B) + f_res


def accel_world(p: DynParams, q_GB: UnitQuaternion, u: RotorSpeeds, v_G, f_res) -> np.ndarray:
    """COM acceleration in the world frame from the Newtonian equation [m/s^2]."""
    v_B = rotate(q_GB.conj(), v_G)
    return rotate(q_GB, body_force(p, u, v_B, f_res)) / p.mass + GRAVITY_W


def imu_accel_predict(
    p: DynParams,
    q_GB: UnitQuaternion,
    u: RotorSpeeds,
    v_G,
    f_res,
    omega_I,
    alpha_I,
) -> np.ndarray:
    """Specific force at the IMU point, expressed in the I frame [m/s^2].

    The lever-arm terms are -omega x (omega x t_IB) - alpha x t_IB: the IMU
    sits at -t_IB from the COM when expressed in I, so centripetal and
    tangential accelerations enter with a minus sign.
    """
    omega_I = np.asarray(omega_I, dtype=float)
    alpha_I = np.asarray(alpha_I, dtype=float)
    v_B = rotate(q_GB.conj(), v_G)
    f_I = rotate(p.q_IB, body_force(p, u, v_B, f_res)) / p.mass
    return f_I - np.cross(omega_I, np.cross(omega_I, p.t_IB)) - np.cross(alpha_I, p.t_IB)
