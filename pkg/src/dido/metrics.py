"""Trajectory evaluation metrics between an estimate and ground truth.

Absolute errors are RMS over samples, relative errors are RMS over pairs a
fixed time apart (default 1/20 s), drift metrics are endpoint errors
normalized by path length / duration.  Rotation distance is the geodesic
angle |log(conj(q_hat) * q)| in rad.

Units follow from the formulas: ATE/RTE in m, ARE/RRE in rad, TD
dimensionless (m/m), RD in rad/min, AFE in N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geom import UnitQuaternion, quat_mul, slerp

DEFAULT_RELATIVE_DT = 1.0 / 20.0


class EmptyTrajectory(ValueError):
    """Metric asked for on fewer than two samples."""


class ZeroLength(ValueError):
    """Translation drift is undefined for a stationary ground truth."""


@dataclass(frozen=True)
class TrajectoryPair:
    """Estimate and truth associated on the estimate's timestamps."""

    t: np.ndarray
    est_q: np.ndarray  # (N,4) wxyz
    est_p: np.ndarray
    true_q: np.ndarray
    true_p: np.ndarray

    def __post_init__(self):
        n = self.t.size
        if n < 2:
            raise EmptyTrajectory("need at least two samples")
        if not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        for arr in (self.est_q, self.true_q):
            if arr.shape != (n, 4):
                raise ValueError("quaternion arrays must be (N,4)")
        for arr in (self.est_p, self.true_p):
            if arr.shape != (n, 3):
                raise ValueError("position arrays must be (N,3)")

    @classmethod
    def align(cls, est_t, est_q, est_p, true_t, true_q, true_p) -> "TrajectoryPair":
        """Resample truth onto the estimate timestamps.

        Positions interpolate linearly, rotations spherically.  Estimate
        timestamps must lie inside the truth's time range.
        """
        est_t = np.asarray(est_t, dtype=float)
        true_t = np.asarray(true_t, dtype=float)
        if est_t[0] < true_t[0] - 1e-9 or est_t[-1] > true_t[-1] + 1e-9:
            raise ValueError("estimate timestamps outside ground-truth range")
        tq = np.zeros((est_t.size, 4))
        tp = np.zeros((est_t.size, 3))
        true_p = np.asarray(true_p, dtype=float)
        true_q = np.asarray(true_q, dtype=float)
        idx = np.clip(np.searchsorted(true_t, est_t, side="right") - 1, 0, true_t.size - 2)
        for i, t in enumerate(est_t):
            j = idx[i]
            span = true_t[j + 1] - true_t[j]
            s = float(np.clip((t - true_t[j]) / span, 0.0, 1.0))
            tp[i] = (1 - s) * true_p[j] + s * true_p[j + 1]
            qa = UnitQuaternion.from_array(true_q[j])
            qb = UnitQuaternion.from_array(true_q[j + 1])
            tq[i] = slerp(qa, qb, s).as_array()
        return cls(
            t=est_t,
            est_q=np.asarray(est_q, dtype=float),
            est_p=np.asarray(est_p, dtype=float),
            true_q=tq,
            true_p=tp,
        )


def _rot_angles(qa: np.ndarray, qb: np.ndarray) -> np.ndarray:
    """Geodesic angle per row between two (N,4) quaternion arrays."""
    out = np.zeros(qa.shape[0])
    for i in range(qa.shape[0]):
        out[i] = UnitQuaternion.from_array(qa[i]).angle_to(UnitQuaternion.from_array(qb[i]))
    return out


def _relative_pairs(t: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs (i, j) with t_j the first sample at or after t_i + dt."""
    j = np.searchsorted(t, t + dt - 1e-12, side="left")
    valid = j < t.size
    i = np.nonzero(valid)[0]
    return i, j[valid]


def ate(pair: TrajectoryPair) -> float:
    """Absolute translation error: RMS position error [m]."""
    err = pair.est_p - pair.true_p
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def are(pair: TrajectoryPair) -> float:
    """Absolute rotation error: RMS geodesic angle [rad]."""
    return float(np.sqrt(np.mean(_rot_angles(pair.est_q, pair.true_q) ** 2)))


def rte(pair: TrajectoryPair, dt: float = DEFAULT_RELATIVE_DT) -> float:
    """Relative translation error over dt windows [m]."""
    i, j = _relative_pairs(pair.t, dt)
    if i.size == 0:
        raise EmptyTrajectory(f"no sample pairs {dt} s apart")
    d_est = pair.est_p[j] - pair.est_p[i]
    d_true = pair.true_p[j] - pair.true_p[i]
    err = d_est - d_true
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def rre(pair: TrajectoryPair, dt: float = DEFAULT_RELATIVE_DT) -> float:
    """Relative rotation error over dt windows [rad]."""
    i, j = _relative_pairs(pair.t, dt)
    if i.size == 0:
        raise EmptyTrajectory(f"no sample pairs {dt} s apart")
    angles = np.zeros(i.size)
    for k in range(i.size):
        q_est = quat_mul(
            UnitQuaternion.from_array(pair.est_q[i[k]]).conj(),
            UnitQuaternion.from_array(pair.est_q[j[k]]),
        )
        q_true = quat_mul(
            UnitQuaternion.from_array(pair.true_q[i[k]]).conj(),
            UnitQuaternion.from_array(pair.true_q[j[k]]),
        )
        angles[k] = q_est.angle_to(q_true)
    return float(np.sqrt(np.mean(angles**2)))


def td(pair: TrajectoryPair) -> float:
    """Translation drift: final position error / trajectory length [m/m]."""
    length = float(np.sum(np.linalg.norm(np.diff(pair.true_p, axis=0), axis=1)))
    if length <= 0.0:
        raise ZeroLength("stationary ground truth")
    return float(np.linalg.norm(pair.est_p[-1] - pair.true_p[-1])) / length


def rd(pair: TrajectoryPair) -> float:
    """Rotation drift: final rotation error / duration [rad/min]."""
    minutes = (pair.t[-1] - pair.t[0]) / 60.0
    final = UnitQuaternion.from_array(pair.est_q[-1]).angle_to(
        UnitQuaternion.from_array(pair.true_q[-1])
    )
    return float(final / minutes)


def afe(f_true: np.ndarray, f_est: np.ndarray) -> float:
    """Absolute force error: RMS residual-force error [N]."""
    f_true = np.asarray(f_true, dtype=float)
    f_est = np.asarray(f_est, dtype=float)
    if f_true.shape != f_est.shape or f_true.ndim != 2 or f_true.shape[0] == 0:
        raise EmptyTrajectory("force sequences must be matching non-empty (N,3)")
    err = f_est - f_true
    return float(np.sqrt(np.mean(np.sum(err**2, axis=1))))


def evaluate_pair(pair: TrajectoryPair, rel_dt: float = DEFAULT_RELATIVE_DT) -> dict:
    """All pose metrics in one dict (the evaluate CLI's payload)."""
    out = {
        "ate": ate(pair),
        "are": are(pair),
        "rte": rte(pair, rel_dt),
        "rre": rre(pair, rel_dt),
        "rd": rd(pair),
    }
    try:
        out["td"] = td(pair)
    except ZeroLength:
        out["td"] = None
    return out
