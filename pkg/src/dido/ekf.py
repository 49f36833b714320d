"""Two-stage error-state EKF: a rotation stage over q_GI and a translation
stage over (p, v, tau, d, q_IB, t_IB).

Stage coupling is one-way: the rotation stage's attitude feeds the
translation stage as a known input with no cross-covariance.  Covariances
are kept symmetric with Joseph-form updates and the mean is propagated by
forward Euler at the sample rate.

Attitude-error conventions differ per stage on purpose:

* rotation stage: LEFT-multiplicative world-frame error, q = exp(dtheta)*q_hat.
  Body-rate propagation then has an exactly identity error transition, and
  the gravity update's null space is the fixed world gravity axis, so the
  variance of rotation-about-gravity is exactly non-decreasing (no spurious
  yaw information during large tilt transients).
* extrinsic rotation (translation stage): right-multiplicative,
  q_IB = q_hat_IB * exp(dtheta_IB).

Translation error-state ordering: [dp(3), dv(3), dtau(1), dd(3),
dtheta_IB(3), dt_IB(3)], 16 states total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .dynamics import E3, GRAVITY_W, DynParams, ResidualForce, RotorSpeeds
from .geom import UnitQuaternion, quat_exp, quat_mul, rotate, skew, symmetrize
from .nninfer.losses import DEFAULT_LOWPASS_HZ
from .providers import ProviderConfig, DebiasProvider, ResidualProvider, VpProvider
from .simkit import FlightLog

# error-state layout
I_P = slice(0, 3)
I_V = slice(3, 6)
I_TAU = 6
I_D = slice(7, 10)
I_TH = slice(10, 13)
I_T = slice(13, 16)
N_ERR = 16

# Table-style initial variances: p, v, tau, d, extrinsic rotation, extrinsic
# translation; rotation stage starts at 1e-8 rad^2.
DEFAULT_INIT_VAR = {
    "rot": 1e-8,
    "p": 1e-4,
    "v": 1e-6,
    "tau": 1e-4,
    "d": 5e-4,
    "q_ib": 5e-5,
    "t_ib": 5e-4,
}
DEFAULT_TAU = 1.1

GRAVITY_ACCEL = -GRAVITY_W  # accelerometer-model gravity, +9.8 on z
MIN_ACCEL_NORM = 1.0  # reject gravity updates near free fall
TAU_FLOOR = 1e-6

_EYE3 = np.eye(3)
_EYE16 = np.eye(N_ERR)


def _cross(a, b):
    # np.cross has ~50us of axis bookkeeping per call; this is the hot path
    return np.array([
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])


class UpdateRejected(RuntimeError):
    """Mahalanobis gate fired; the state was left unchanged."""


class NonFiniteState(RuntimeError):
    def __init__(self, step: int, what: str):
        super().__init__(f"non-finite filter state at step {step}: {what}")
        self.step = step


@dataclass(frozen=True)
class RotStageState:
    q_GI: UnitQuaternion
    P: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        if self.P.shape != (3, 3):
            raise ValueError("rotation covariance must be 3x3")


@dataclass(frozen=True)
class TransStageState:
    p: np.ndarray
    v: np.ndarray
    tau: float
    d: np.ndarray
    q_IB: UnitQuaternion
    t_IB: np.ndarray
    P: np.ndarray

    def __post_init__(self):
        for name in ("p", "v", "d", "t_IB"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "P", np.asarray(self.P, dtype=float))
        if self.P.shape != (N_ERR, N_ERR):
            raise ValueError("translation covariance must be 16x16")
        if self.tau <= 0:
            raise ValueError("tau must stay positive")

    def params(self, mass: float) -> DynParams:
        return DynParams(mass=mass, tau=self.tau, d=np.maximum(self.d, 0.0),
                         q_IB=self.q_IB, t_IB=self.t_IB)


def rot_initial(q0: UnitQuaternion, var: float = DEFAULT_INIT_VAR["rot"]) -> RotStageState:
    return RotStageState(q0, var * np.eye(3))


def trans_initial(
    p0,
    v0,
    tau: float = DEFAULT_TAU,
    d=(0.0, 0.0, 0.0),
    q_IB: UnitQuaternion | None = None,
    t_IB=(0.0, 0.0, 0.0),
    init_var: dict | None = None,
) -> TransStageState:
    var = dict(DEFAULT_INIT_VAR)
    if init_var:
        var.update(init_var)
    P = np.zeros((N_ERR, N_ERR))
    P[I_P, I_P] = var["p"] * np.eye(3)
    P[I_V, I_V] = var["v"] * np.eye(3)
    P[I_TAU, I_TAU] = var["tau"]
    P[I_D, I_D] = var["d"] * np.eye(3)
    P[I_TH, I_TH] = var["q_ib"] * np.eye(3)
    P[I_T, I_T] = var["t_ib"] * np.eye(3)
    return TransStageState(
        p=np.asarray(p0, dtype=float),
        v=np.asarray(v0, dtype=float),
        tau=tau,
        d=np.asarray(d, dtype=float),
        q_IB=q_IB or UnitQuaternion.identity(),
        t_IB=np.asarray(t_IB, dtype=float),
        P=P,
    )


@dataclass(frozen=True)
class FilterConfig:
    """Noise levels, update cadences and options for a two-stage run.

    sigma_gyro / sigma_accel are per-sample measurement stds matching the
    simulator's NoiseSpec; the rotation-stage step noise is (sigma_gyro*dt)^2
    (i.e. a PSD of sigma^2 dt integrated over dt).
    """

    mass: float = 1.0
    sigma_gyro: float = 2e-3
    sigma_accel: float = 2e-2
    grav_update_every: int = 1  # 0 disables gravity updates
    grav_sigma_scale: float = 1.0
    accel_update_every: int = 1  # 0 disables dynamics-measurement updates
    gate_prob: float | None = None  # chi^2 gate quantile, None = off
    lowpass_hz: float = DEFAULT_LOWPASS_HZ
    # stabilizing process noise PSDs: p/v cover integration truncation,
    # the parameter entries keep nominally-constant states alive (default 0)
    q_p: float = 0.0
    q_v: float = 0.0
    q_tau: float = 0.0
    q_d: float = 0.0
    q_theta: float = 0.0
    q_t: float = 0.0
    store_pv_cov: bool = False


@lru_cache(maxsize=16)
def _chi2_threshold(prob: float, dof: int) -> float:
    from scipy.stats import chi2

    return float(chi2.ppf(prob, dof))


def _kalman_update(P: np.ndarray, H: np.ndarray, R: np.ndarray, r: np.ndarray,
                   gate_prob: float | None):
    """Joseph-form EKF update; returns (dx, P_new)."""
    S = H @ P @ H.T + R
    if gate_prob is not None:
        m2 = float(r @ np.linalg.solve(S, r))
        if m2 > _chi2_threshold(gate_prob, r.size):
            raise UpdateRejected(f"gate: mahalanobis^2 {m2:.2f}")
    K = np.linalg.solve(S, H @ P).T
    dx = K @ r
    IKH = (_EYE16 if P.shape[0] == N_ERR else np.eye(P.shape[0])) - K @ H
    P_new = symmetrize(IKH @ P @ IKH.T + K @ R @ K.T)
    return dx, P_new


# ---------------------------------------------------------------------------
# rotation stage


def rot_predict(s: RotStageState, omega_hat, dt: float, sigma_gyro: float) -> RotStageState:
    """Mean q <- q * exp(omega dt).

    With the left-multiplicative world-frame error the transition is exactly
    identity (right multiplication leaves exp(dtheta) untouched), so the
    covariance only picks up the mapped gyro noise, R (sigma dt)^2 R^T =
    (sigma dt)^2 I for isotropic noise.
    """
    q = quat_mul(s.q_GI, quat_exp(np.asarray(omega_hat, dtype=float) * dt))
    Q = (sigma_gyro * dt) ** 2 * np.eye(3)
    return RotStageState(q, symmetrize(s.P + Q))


def rot_update_gravity(s: RotStageState, a_hat, sigma_accel: float,
                       gate_prob: float | None = None) -> RotStageState:
    """Tilt correction from the gravity-alignment constraint.

    Measurement model a_hat ~ R(q)^T g; with the world-frame error the
    Jacobian is H = R_hat^T [g]x, whose null space is the world gravity
    axis: H @ g == 0 exactly, so rotation-about-gravity never gains
    spurious information.
    """
    a_hat = np.asarray(a_hat, dtype=float)
    if np.linalg.norm(a_hat) <= MIN_ACCEL_NORM:
        return s
    pred = rotate(s.q_GI.conj(), GRAVITY_ACCEL)
    r = a_hat - pred
    H = s.q_GI.to_matrix().T @ skew(GRAVITY_ACCEL)
    R = sigma_accel**2 * np.eye(3)
    dth, P = _kalman_update(s.P, H, R, r, gate_prob)
    return RotStageState(quat_mul(quat_exp(dth), s.q_GI), P)


# ---------------------------------------------------------------------------
# translation stage


def _body_quantities(s: TransStageState, q_GI: UnitQuaternion, u: RotorSpeeds,
                     f_res: np.ndarray, mass: float):
    C = s.q_IB.to_matrix()
    R_GB = q_GI.to_matrix() @ C
    v_B = R_GB.T @ s.v
    f_B = s.tau * u.u_ss * E3 - u.u_s * (s.d * v_B) + f_res
    return C, R_GB, v_B, f_B


def trans_predict(s: TransStageState, u: RotorSpeeds, q_GI: UnitQuaternion,
                  f_res: ResidualForce, dt: float, cfg: FilterConfig) -> TransStageState:
    """Forward-Euler mean step plus first-order covariance propagation."""
    m = cfg.mass
    C, R_GB, v_B, f_B = _body_quantities(s, q_GI, u, f_res.f_res, m)
    a = R_GB @ f_B / m + GRAVITY_W

    A = np.zeros((N_ERR, N_ERR))
    A[I_P, I_V] = _EYE3
    A[I_V, I_V] = -(u.u_s / m) * (R_GB * s.d) @ R_GB.T
    A[I_V, I_TAU] = (u.u_ss / m) * R_GB[:, 2]
    A[I_V, I_D] = -(u.u_s / m) * (R_GB * v_B)
    A[I_V, I_TH] = -(R_GB @ (skew(f_B) + u.u_s * (skew(v_B) * s.d[:, None]))) / m
    Phi = _EYE16 + A * dt

    Q = np.zeros((N_ERR, N_ERR))
    Q[I_V, I_V] = (dt / m) ** 2 * ((R_GB * f_res.sigma2_f) @ R_GB.T) + (cfg.q_v * dt) * _EYE3
    Q[I_P, I_P] = (cfg.q_p * dt) * _EYE3
    Q[I_TAU, I_TAU] = cfg.q_tau * dt
    Q[I_D, I_D] = (cfg.q_d * dt) * _EYE3
    Q[I_TH, I_TH] = (cfg.q_theta * dt) * _EYE3
    Q[I_T, I_T] = (cfg.q_t * dt) * _EYE3

    return replace(
        s,
        p=s.p + s.v * dt,
        v=s.v + a * dt,
        tau=max(s.tau, TAU_FLOOR),
        P=symmetrize(Phi @ s.P @ Phi.T + Q),
    )


def _apply_correction(s: TransStageState, dx: np.ndarray, P: np.ndarray) -> TransStageState:
    return TransStageState(
        p=s.p + dx[I_P],
        v=s.v + dx[I_V],
        tau=max(s.tau + dx[I_TAU], TAU_FLOOR),
        d=s.d + dx[I_D],
        q_IB=quat_mul(s.q_IB, quat_exp(dx[I_TH])),
        t_IB=s.t_IB + dx[I_T],
        P=P,
    )


def trans_update_accel(
    s: TransStageState,
    a_meas,
    omega_hat,
    alpha_hat,
    u: RotorSpeeds,
    f_res: ResidualForce,
    q_GI: UnitQuaternion,
    cfg: FilterConfig,
) -> TransStageState:
    """Dynamics measurement: predicted specific force at the IMU point.

    Jacobians cover v, tau, d, the extrinsic rotation, and the lever arm;
    with omega_hat = alpha_hat = 0 the lever-arm block is exactly zero.
    """
    m = cfg.mass
    omega_hat = np.asarray(omega_hat, dtype=float)
    alpha_hat = np.asarray(alpha_hat, dtype=float)
    C, R_GB, v_B, f_B = _body_quantities(s, q_GI, u, f_res.f_res, m)
    pred = (
        C @ f_B / m
        - _cross(omega_hat, _cross(omega_hat, s.t_IB))
        - _cross(alpha_hat, s.t_IB)
    )
    r = np.asarray(a_meas, dtype=float) - pred

    H = np.zeros((3, N_ERR))
    H[:, I_V] = -(u.u_s / m) * (C * s.d) @ R_GB.T
    H[:, I_TAU] = (u.u_ss / m) * C[:, 2]
    H[:, I_D] = -(u.u_s / m) * (C * v_B)
    H[:, I_TH] = -(C @ (skew(f_B) + u.u_s * (skew(v_B) * s.d[:, None]))) / m
    so = skew(omega_hat)
    H[:, I_T] = -(so @ so + skew(alpha_hat))

    R = cfg.sigma_accel**2 * _EYE3 + ((C * f_res.sigma2_f) @ C.T) / m**2
    dx, P = _kalman_update(s.P, H, R, r, cfg.gate_prob)
    return _apply_correction(s, dx, P)


def trans_update_vp(s: TransStageState, obs, q_GI: UnitQuaternion, omega_hat,
                    cfg: FilterConfig) -> TransStageState:
    """Stacked velocity/position observation of the IMU point.

    v_GI = v - R_GI (omega x t_IB), p_GI = p - R_GI t_IB; no dependence on
    the extrinsic rotation (the lever lives in the I frame).
    """
    omega_hat = np.asarray(omega_hat, dtype=float)
    R_GI = q_GI.to_matrix()
    pred_v = s.v - R_GI @ _cross(omega_hat, s.t_IB)
    pred_p = s.p - R_GI @ s.t_IB
    r = np.concatenate([obs.v_GI - pred_v, obs.p_GI - pred_p])

    H = np.zeros((6, N_ERR))
    H[0:3, I_V] = _EYE3
    H[0:3, I_T] = -R_GI @ skew(omega_hat)
    H[3:6, I_P] = _EYE3
    H[3:6, I_T] = -R_GI

    R = np.diag(np.concatenate([obs.sigma2_v, obs.sigma2_p]))
    dx, P = _kalman_update(s.P, H, R, r, cfg.gate_prob)
    return _apply_correction(s, dx, P)


# ---------------------------------------------------------------------------
# full pipeline


@dataclass
class FilterResult:
    t: np.ndarray
    q_GI: np.ndarray
    p: np.ndarray
    v: np.ndarray
    tau: np.ndarray
    d: np.ndarray
    q_IB: np.ndarray
    t_IB: np.ndarray
    P_rot_diag: np.ndarray
    P_diag: np.ndarray
    f_res_hat: np.ndarray | None = None
    P_pv: np.ndarray | None = None
    rejected_updates: int = 0

    def estimate_csv(self, path) -> None:
        data = np.column_stack(
            [self.t, self.q_GI, self.p, self.v, self.tau, self.d, self.q_IB, self.t_IB]
        )
        header = (
            "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz,tau,dx,dy,dz,eqw,eqx,eqy,eqz,etx,ety,etz"
        )
        np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")

    def summary(self) -> dict:
        return {
            "final_tau": float(self.tau[-1]),
            "final_d": self.d[-1].tolist(),
            "final_q_IB": self.q_IB[-1].tolist(),
            "final_t_IB": self.t_IB[-1].tolist(),
            "rot_cov_trace": float(self.P_rot_diag[-1].sum()),
            "trans_cov_trace": float(self.P_diag[-1].sum()),
            "rejected_updates": int(self.rejected_updates),
            "steps": int(self.t.size),
        }


def make_providers(pcfg: ProviderConfig, log: FlightLog, true_params: DynParams | None):
    root = np.random.SeedSequence(pcfg.seed)
    keys = {name: np.random.default_rng(s) for name, s in
            zip(("debias", "residual", "vp"), root.spawn(3))}
    debias = DebiasProvider(pcfg.debias, log=log, rng=keys["debias"])
    residual = ResidualProvider(pcfg.residual, log=log, rng=keys["residual"])
    vp = None
    if pcfg.vp.mode != "null":
        vp = VpProvider(pcfg.vp, log=log, rng=keys["vp"], true_params=true_params)
    return debias, residual, vp


def run_two_stage(
    log: FlightLog,
    provider_cfg: ProviderConfig,
    cfg: FilterConfig,
    rot0: RotStageState,
    trans0: TransStageState,
    true_params: DynParams | None = None,
) -> FilterResult:
    """Run the full two-stage filter over a log.

    Per IMU sample: gravity update (rate-limited) and dynamics-measurement
    update, velocity/position update per completed integration window, then
    forward prediction of both stages to the next sample with zero-order-held
    rotor speeds.
    """
    n = len(log)
    dt = log.dt
    rows = log.rotor_row_for_imu()
    debias, residual, vp = make_providers(provider_cfg, log, true_params)

    rot = rot0
    trans = trans0
    beta = 1.0 - math.exp(-2.0 * math.pi * cfg.lowpass_hz * dt)

    out = {
        "t": log.imu_t.copy(),
        "q_GI": np.zeros((n, 4)),
        "p": np.zeros((n, 3)),
        "v": np.zeros((n, 3)),
        "tau": np.zeros(n),
        "d": np.zeros((n, 3)),
        "q_IB": np.zeros((n, 4)),
        "t_IB": np.zeros((n, 3)),
        "P_rot_diag": np.zeros((n, 3)),
        "P_diag": np.zeros((n, N_ERR)),
        "f_res_hat": np.zeros((n, 3)),
    }
    P_pv = np.zeros((n, 6, 6)) if cfg.store_pv_cov else None
    rejected = 0

    omega_f = None
    omega_f_prev = None
    u_cache_row = -1
    u = None
    for k in range(n):
        t = float(log.imu_t[k])
        est = debias.push(k, t, log.gyro[k], log.accel[k])
        omega_hat = log.gyro[k] - est.b_gyro
        a_deb = log.accel[k] - est.b_accel

        # causal low-pass + backward-difference angular acceleration
        if omega_f is None:
            omega_f = omega_hat.copy()
            alpha_hat = np.zeros(3)
        else:
            omega_f_prev = omega_f
            omega_f = omega_f + beta * (omega_hat - omega_f)
            alpha_hat = (omega_f - omega_f_prev) / dt

        if rows[k] != u_cache_row:
            u_cache_row = rows[k]
            u = RotorSpeeds(log.rotor_u[u_cache_row])

        if cfg.grav_update_every and k % cfg.grav_update_every == 0:
            try:
                rot = rot_update_gravity(
                    rot, a_deb, cfg.sigma_accel * cfg.grav_sigma_scale, cfg.gate_prob
                )
            except UpdateRejected:
                rejected += 1

        C = trans.q_IB.to_matrix()
        v_B = C.T @ (rot.q_GI.to_matrix().T @ trans.v)
        omega_B = C.T @ omega_f
        f_res = residual.push(k, v_B, omega_B, u.u)

        if cfg.accel_update_every and k % cfg.accel_update_every == 0:
            try:
                trans = trans_update_accel(
                    trans, a_deb, omega_f, alpha_hat, u, f_res, rot.q_GI, cfg
                )
            except UpdateRejected:
                rejected += 1

        if vp is not None:
            if vp.needs_anchor():
                R_GI = rot.q_GI.to_matrix()
                v_gi = trans.v - R_GI @ np.cross(omega_f, trans.t_IB)
                p_gi = trans.p - R_GI @ trans.t_IB
                vp.set_anchor(k, t, v_gi, p_gi)
            obs = vp.push(k, t, a_deb, rot.q_GI, dt)
            if obs is not None:
                try:
                    trans = trans_update_vp(trans, obs, rot.q_GI, omega_f, cfg)
                except UpdateRejected:
                    rejected += 1

        # record the posterior at t_k
        q = rot.q_GI
        out["q_GI"][k] = (q.w, q.x, q.y, q.z)
        out["p"][k] = trans.p
        out["v"][k] = trans.v
        out["tau"][k] = trans.tau
        out["d"][k] = trans.d
        e = trans.q_IB
        out["q_IB"][k] = (e.w, e.x, e.y, e.z)
        out["t_IB"][k] = trans.t_IB
        out["P_rot_diag"][k] = np.diag(rot.P)
        out["P_diag"][k] = np.diag(trans.P)
        out["f_res_hat"][k] = f_res.f_res
        if P_pv is not None:
            P_pv[k] = trans.P[0:6, 0:6]

        checksum = float(out["P_diag"][k].sum() + trans.p.sum() + trans.v.sum())
        if not math.isfinite(checksum):
            raise NonFiniteState(k, "translation stage")

        # predict to the next sample (left-endpoint inputs, ZOH rotor speeds)
        if k + 1 < n:
            trans = trans_predict(trans, u, rot.q_GI, f_res, dt, cfg)
            rot = rot_predict(rot, omega_hat, dt, cfg.sigma_gyro)

    return FilterResult(P_pv=P_pv, rejected_updates=rejected, **out)
