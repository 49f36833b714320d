"""Quaternion / SO(3) kernels used by the simulator, the filter, and the losses.

Conventions
-----------
* Hamilton product, scalar-first storage (w, x, y, z).
* q and -q encode the same rotation; construction canonicalizes to w >= 0.
* Rotations compose as R(a * b) = R(a) @ R(b); body rates enter on the
  right: q_{k+1} = q_k * exp(omega * dt).
* exp/log map 3-vectors (rotation vectors, |v| = angle in rad) to unit
  quaternions and back.

Quaternions are plain float slots (not ndarrays) on purpose: the filter
multiplies millions of them and scalar math is several times faster than
length-4 numpy arrays.
"""

from __future__ import annotations

import math

import numpy as np

# Below this angle exp/log switch to their Taylor branches to avoid 0/0.
_SMALL_ANGLE = 1e-8
# log is undefined at pi; reject slightly earlier.
_LOG_ANGLE_LIMIT = math.pi - 1e-6


class DegenerateRotation(ValueError):
    """Rotation angle too close to pi for a well-defined log map."""


class UnitQuaternion:
    """Immutable unit quaternion, renormalized and sign-canonicalized on construction."""

    __slots__ = ("w", "x", "y", "z", "_mat")

    def __init__(self, w: float, x: float, y: float, z: float):
        n = math.sqrt(w * w + x * x + y * y + z * z)
        if n < 1e-12:
            raise ValueError("quaternion norm too small to normalize")
        if w < 0.0:
            n = -n
        object.__setattr__(self, "w", w / n)
        object.__setattr__(self, "x", x / n)
        object.__setattr__(self, "y", y / n)
        object.__setattr__(self, "z", z / n)
        object.__setattr__(self, "_mat", None)

    def __setattr__(self, name, value):
        raise AttributeError("UnitQuaternion is immutable")

    def __repr__(self):
        return f"UnitQuaternion({self.w:.9g}, {self.x:.9g}, {self.y:.9g}, {self.z:.9g})"

    # -- constructors ------------------------------------------------------

    @staticmethod
    def identity() -> "UnitQuaternion":
        return UnitQuaternion(1.0, 0.0, 0.0, 0.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "UnitQuaternion":
        ax = np.asarray(axis, dtype=float)
        n = float(np.linalg.norm(ax))
        if n == 0.0:
            raise ValueError("zero axis")
        return quat_exp(ax * (angle / n))

    @staticmethod
    def from_array(q) -> "UnitQuaternion":
        w, x, y, z = (float(v) for v in q)
        return UnitQuaternion(w, x, y, z)

    @staticmethod
    def from_matrix(R) -> "UnitQuaternion":
        """Rotation matrix to quaternion (Shepperd's method, largest pivot)."""
        R = np.asarray(R, dtype=float)
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        if tr > 0.0:
            s = math.sqrt(tr + 1.0) * 2.0
            return UnitQuaternion(
                0.25 * s,
                (R[2, 1] - R[1, 2]) / s,
                (R[0, 2] - R[2, 0]) / s,
                (R[1, 0] - R[0, 1]) / s,
            )
        if R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
            s = math.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            return UnitQuaternion(
                (R[2, 1] - R[1, 2]) / s, 0.25 * s,
                (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s,
            )
        if R[1, 1] > R[2, 2]:
            s = math.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
            return UnitQuaternion(
                (R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                0.25 * s, (R[1, 2] + R[2, 1]) / s,
            )
        s = math.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        return UnitQuaternion(
            (R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
            (R[1, 2] + R[2, 1]) / s, 0.25 * s,
        )

    # -- views -------------------------------------------------------------

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def conj(self) -> "UnitQuaternion":
        return UnitQuaternion(self.w, -self.x, -self.y, -self.z)

    def to_matrix(self) -> np.ndarray:
        """3x3 rotation matrix R with R @ v == rotate(q, v) (cached)."""
        if self._mat is not None:
            return self._mat
        w, x, y, z = self.w, self.x, self.y, self.z
        xx, yy, zz = x * x, y * y, z * z
        wx, wy, wz = w * x, w * y, w * z
        xy, xz, yz = x * y, x * z, y * z
        m = np.array(
            [
                [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
                [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
                [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
            ]
        )
        m.setflags(write=False)
        object.__setattr__(self, "_mat", m)
        return m

    def angle_to(self, other: "UnitQuaternion") -> float:
        """Geodesic distance |log(conj(self) * other)| in rad."""
        d = quat_mul(self.conj(), other)
        # robust even near pi where quat_log raises
        s = math.sqrt(d.x * d.x + d.y * d.y + d.z * d.z)
        return 2.0 * math.atan2(s, d.w)


def quat_mul(a: UnitQuaternion, b: UnitQuaternion) -> UnitQuaternion:
    """Hamilton product a * b (apply b first when rotating vectors)."""
    aw, ax, ay, az = a.w, a.x, a.y, a.z
    bw, bx, by, bz = b.w, b.x, b.y, b.z
    return UnitQuaternion(
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_exp(v) -> UnitQuaternion:
    """Map a rotation vector (rad) to a unit quaternion.

    exp(v) = (cos(|v|/2), sin(|v|/2) * v/|v|), Taylor branch below 1e-8.
    """
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    angle = math.sqrt(vx * vx + vy * vy + vz * vz)
    half = 0.5 * angle
    if angle < _SMALL_ANGLE:
        # sin(h)/angle = 0.5 - angle^2/48 + O(angle^4)
        k = 0.5 - angle * angle / 48.0
        return UnitQuaternion(1.0 - half * half / 2.0, vx * k, vy * k, vz * k)
    k = math.sin(half) / angle
    return UnitQuaternion(math.cos(half), vx * k, vy * k, vz * k)


def quat_log(q: UnitQuaternion) -> np.ndarray:
    """Inverse of quat_exp; defined for rotation angle < pi.

    Raises DegenerateRotation within 1e-6 of pi, where the axis is ambiguous.
    """
    s = math.sqrt(q.x * q.x + q.y * q.y + q.z * q.z)
    # w >= 0 by canonicalization, so angle = 2*atan2(s, w) is in [0, pi]
    angle = 2.0 * math.atan2(s, q.w)
    if angle >= _LOG_ANGLE_LIMIT:
        raise DegenerateRotation(f"rotation angle {angle:.9f} rad too close to pi")
    if s < _SMALL_ANGLE:
        k = 2.0 + angle * angle / 12.0
    else:
        k = angle / s
    return np.array([q.x * k, q.y * k, q.z * k])


def integrate_gyro(q: UnitQuaternion, omega, dt: float) -> UnitQuaternion:
    """One attitude step q * exp(omega * dt) for a body-frame rate omega.

    Exact when omega is constant over the step.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    return quat_mul(q, quat_exp((float(omega[0]) * dt, float(omega[1]) * dt, float(omega[2]) * dt)))


def rotate(q: UnitQuaternion, v) -> np.ndarray:
    """Rotate a 3-vector: R(q) @ v, without forming the matrix."""
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    w, x, y, z = q.w, q.x, q.y, q.z
    # v + 2*w*(u x v) + 2*(u x (u x v)), u = (x,y,z)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + (y * tz - z * ty),
            vy + w * ty + (z * tx - x * tz),
            vz + w * tz + (x * ty - y * tx),
        ]
    )


def skew(v) -> np.ndarray:
    """Cross-product matrix: skew(a) @ b == a x b."""
    vx, vy, vz = float(v[0]), float(v[1]), float(v[2])
    return np.array([[0.0, -vz, vy], [vz, 0.0, -vx], [-vy, vx, 0.0]])


def slerp(a: UnitQuaternion, b: UnitQuaternion, s: float) -> UnitQuaternion:
    """Spherical interpolation from a (s=0) to b (s=1) along the short arc."""
    return quat_mul(a, quat_exp(s * quat_log(quat_mul(a.conj(), b))))


def symmetrize(P: np.ndarray) -> np.ndarray:
    """Return (P + P^T)/2; covariance hygiene after filter updates."""
    return 0.5 * (P + P.T)
