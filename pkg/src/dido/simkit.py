"""Physics-consistent flight-log generation.

Ground truth comes from forward integration of the rigid-body model under a
flatness feedforward + PD feedback controller, so the translation process
model is exactly realizable from the logged rotor speeds (model mismatch is
reintroduced deliberately through the residual-force model).  Measurement
streams are then corrupted per the IMU model: white noise plus random-walk
biases, with the lever-arm terms applied when the IMU is mounted off the
center of mass.

Integration scheme: attitude advances exactly (the commanded body rate is
held constant over each IMU step, so q_{k+1} = q_k * exp(omega*dt)), while
position/velocity advance with one RK4 step per IMU sample.  Rotor speeds
are recomputed at the rotor rate and zero-order-held in between, and the
held value is what gets logged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .dynamics import E3, GRAVITY_W, DynParams, RotorSpeeds, body_force
from .geom import UnitQuaternion, quat_exp, quat_log, quat_mul

# position PD gains and attitude P gain for the tracking controller
KP_POS = 8.0
KD_POS = 4.5
K_ATT = 12.0
OMEGA_MAX = 8.0  # rad/s command clip
DIVERGENCE_LIMIT = 10.0  # m


class RangeError(ValueError):
    """Trajectory evaluated outside [0, duration]."""


class SimDiverged(RuntimeError):
    """Controller lost the reference by more than DIVERGENCE_LIMIT."""

    def __init__(self, step: int, err: float):
        super().__init__(f"simulation diverged at step {step}: tracking error {err:.2f} m")
        self.step = step


@dataclass(frozen=True)
class NoiseSpec:
    """White-noise and random-walk IMU corruption levels.

    sigma_gyro / sigma_accel are per-sample white-noise stds; the walk stds
    are continuous densities (per sqrt-second) so the discrete step variance
    is sigma_walk^2 * dt.
    """

    sigma_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_bg_walk: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_ba_walk: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_gyro0: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_accel0: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for name in ("sigma_gyro", "sigma_accel", "sigma_bg_walk", "sigma_ba_walk",
                     "b_gyro0", "b_accel0"):
            v = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (3,)).copy()
            object.__setattr__(self, name, v)
        for name in ("sigma_gyro", "sigma_accel", "sigma_bg_walk", "sigma_ba_walk"):
            if np.any(getattr(self, name) < 0.0):
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class ResidualModel:
    """Unmodeled-force model applied in truth propagation and in the log.

    kind: "zero", "constant" (body-frame force c), or "quad_drag"
    (f_res = -k * |v_B| * v_B).
    """

    kind: str = "zero"
    c: np.ndarray = field(default_factory=lambda: np.zeros(3))
    k: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "constant", "quad_drag"):
            raise ValueError(f"unknown residual model {self.kind!r}")
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))

    def force(self, v_B: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(3)
        if self.kind == "constant":
            return self.c
        return -self.k * np.linalg.norm(v_B) * v_B


@dataclass(frozen=True)
class TrajectorySpec:
    """Analytic C^2 reference trajectories (hover/circle/figure8/random)."""

    kind: str = "hover"  # hover | circle | figure8 | random | vertical
    duration: float = 10.0
    yaw_mode: str = "constant"
    height: float = 1.0
    radius: float = 1.0  # circle
    period: float = 8.0  # circle / figure8
    scale: float = 1.0  # figure8
    seed: int = 0  # random
    n_sinusoids: int = 3  # random, per axis
    max_speed: float = 1.5  # random

    def __post_init__(self):
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")
        if self.kind not in ("hover", "circle", "figure8", "random", "vertical"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.yaw_mode not in ("constant", "forward"):
            raise ValueError(f"unknown yaw mode {self.yaw_mode!r}")
        if self.kind == "circle" and (self.radius <= 0 or self.period <= 0):
            raise ValueError("circle needs positive radius and period")
        if self.kind in ("figure8", "vertical") and (self.scale <= 0 or self.period <= 0):
            raise ValueError(f"{self.kind} needs positive scale and period")
        if self.kind == "random" and (self.n_sinusoids < 1 or self.max_speed <= 0):
            raise ValueError("random needs sinusoids and positive max speed")


@lru_cache(maxsize=32)
def _random_basis(spec: TrajectorySpec):
    """Seeded sinusoid bank for random trajectories, scaled to max_speed."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_sinusoids
    omega = rng.uniform(2 * math.pi * 0.05, 2 * math.pi * 0.4, size=(3, n))
    phase = rng.uniform(0, 2 * math.pi, size=(3, n))
    amp = rng.uniform(0.5, 1.0, size=(3, n)) / omega
    amp[2] *= 0.5  # calmer vertical motion
    # scan the velocity to normalize the peak speed
    t = np.linspace(0.0, spec.duration, 4096)
    v = np.zeros((3, t.size))
    for ax in range(3):
        for j in range(n):
            v[ax] += amp[ax, j] * omega[ax, j] * np.cos(omega[ax, j] * t + phase[ax, j])
    peak = np.max(np.linalg.norm(v, axis=0))
    k = spec.max_speed / peak if peak > 0 else 1.0
    return amp * k, omega, phase


def reference_trajectory(spec: TrajectorySpec, t: float):
    """Reference position, velocity, acceleration and yaw at time t."""
    if t < 0.0 or t > spec.duration:
        raise RangeError(f"t={t} outside [0, {spec.duration}]")
    if spec.kind == "hover":
        p = np.array([0.0, 0.0, spec.height])
        v = np.zeros(3)
        a = np.zeros(3)
    elif spec.kind == "circle":
        w = 2 * math.pi / spec.period
        c, s = math.cos(w * t), math.sin(w * t)
        r = spec.radius
        p = np.array([r * c, r * s, spec.height])
        v = np.array([-r * w * s, r * w * c, 0.0])
        a = np.array([-r * w * w * c, -r * w * w * s, 0.0])
    elif spec.kind == "vertical":
        # pure vertical bobbing: level attitude, v_G = [0, 0, *]
        w = 2 * math.pi / spec.period
        s0 = spec.scale
        p = np.array([0.0, 0.0, spec.height + s0 * math.sin(w * t)])
        v = np.array([0.0, 0.0, s0 * w * math.cos(w * t)])
        a = np.array([0.0, 0.0, -s0 * w * w * math.sin(w * t)])
    elif spec.kind == "figure8":
        w = 2 * math.pi / spec.period
        s0 = spec.scale
        p = np.array([s0 * math.sin(w * t), 0.5 * s0 * math.sin(2 * w * t), spec.height])
        v = np.array([s0 * w * math.cos(w * t), s0 * w * math.cos(2 * w * t), 0.0])
        a = np.array(
            [-s0 * w * w * math.sin(w * t), -2 * s0 * w * w * math.sin(2 * w * t), 0.0]
        )
    else:
        amp, omega, phase = _random_basis(spec)
        arg = omega * t + phase
        p = (amp * np.sin(arg)).sum(axis=1) + np.array([0.0, 0.0, spec.height])
        v = (amp * omega * np.cos(arg)).sum(axis=1)
        a = (-amp * omega**2 * np.sin(arg)).sum(axis=1)

    if spec.yaw_mode == "forward" and np.hypot(v[0], v[1]) > 0.1:
        yaw = math.atan2(v[1], v[0])
    else:
        yaw = 0.0
    return p, v, a, yaw


@dataclass
class FlightLog:
    """Time-aligned IMU, rotor-speed and ground-truth streams.

    Truth is sampled at the IMU rate; rotor timestamps are the subset of IMU
    timestamps where the controller recomputed the speeds (zero-order hold
    in between).  alpha_I is kept in memory for measurement synthesis and
    tests but is never serialized: the filter must differentiate its own
    filtered gyro instead of reading it.
    """

    imu_t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray
    rotor_t: np.ndarray
    rotor_u: np.ndarray
    q_GI: np.ndarray  # (N,4) wxyz
    p_GB: np.ndarray
    v_GB: np.ndarray
    a_GB: np.ndarray
    omega_I: np.ndarray
    b_gyro: np.ndarray
    b_accel: np.ndarray
    f_res: np.ndarray
    alpha_I: np.ndarray | None = None
    f_imu: float = 400.0
    f_rotor: float = 100.0

    def __post_init__(self):
        if not np.all(np.diff(self.imu_t) > 0) or not np.all(np.diff(self.rotor_t) > 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return self.imu_t.size

    @property
    def dt(self) -> float:
        return 1.0 / self.f_imu

    def rotor_row_for_imu(self) -> np.ndarray:
        """Index of the active (zero-order-held) rotor row per IMU sample."""
        return np.searchsorted(self.rotor_t, self.imu_t, side="right") - 1

    def truth_quat(self, k: int) -> UnitQuaternion:
        return UnitQuaternion.from_array(self.q_GI[k])

    # -- CSV round trip ----------------------------------------------------

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        imu = np.column_stack([self.imu_t, self.gyro, self.accel])
        _write_csv(out / "imu.csv", "t,gx,gy,gz,ax,ay,az", imu)
        rotor = np.column_stack([self.rotor_t, self.rotor_u])
        _write_csv(out / "rotor.csv", "t,u1,u2,u3,u4", rotor)
        truth = np.column_stack(
            [self.imu_t, self.q_GI, self.p_GB, self.v_GB, self.b_gyro, self.b_accel, self.f_res]
        )
        _write_csv(
            out / "truth.csv",
            "t,qw,qx,qy,qz,px,py,pz,vx,vy,vz,bgx,bgy,bgz,bax,bay,baz,frx,fry,frz",
            truth,
        )

    @classmethod
    def load(cls, log_dir) -> "FlightLog":
        d = Path(log_dir)
        for name in ("imu.csv", "rotor.csv", "truth.csv"):
            if not (d / name).exists():
                raise FileNotFoundError(f"missing {name} in {d}")
        imu = _read_csv(d / "imu.csv", 7)
        rotor = _read_csv(d / "rotor.csv", 5)
        truth = _read_csv(d / "truth.csv", 20)
        imu_t = imu[:, 0]
        gyro = imu[:, 1:4]
        b_gyro = truth[:, 11:14]
        v = truth[:, 8:11]
        dt = float(np.median(np.diff(imu_t)))
        # omega/accel truth are not serialized; recover the rate from the
        # debiased gyro (exact when white noise is zero) and the COM
        # acceleration by differentiating v (O(dt^2)).
        omega_I = gyro - b_gyro
        a_GB = np.gradient(v, axis=0) / dt
        return cls(
            imu_t=imu_t,
            gyro=gyro,
            accel=imu[:, 4:7],
            rotor_t=rotor[:, 0],
            rotor_u=rotor[:, 1:5],
            q_GI=truth[:, 1:5],
            p_GB=truth[:, 5:8],
            v_GB=v,
            a_GB=a_GB,
            omega_I=omega_I,
            b_gyro=b_gyro,
            b_accel=truth[:, 14:17],
            f_res=truth[:, 17:20],
            alpha_I=None,
            f_imu=1.0 / dt,
            f_rotor=1.0 / float(np.median(np.diff(rotor[:, 0]))) if rotor.shape[0] > 1 else 1.0 / dt,
        )


def _write_csv(path: Path, header: str, data: np.ndarray) -> None:
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=header, comments="")


def _read_csv(path: Path, ncols: int) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != ncols:
        raise ValueError(f"{path} has {data.shape[1]} columns, expected {ncols}")
    return data


# ---------------------------------------------------------------------------
# truth propagation


def propagate_truth(
    q_GB: UnitQuaternion,
    p: np.ndarray,
    v: np.ndarray,
    params: DynParams,
    u: RotorSpeeds,
    omega_B: np.ndarray,
    res_model: ResidualModel,
    dt: float,
    substeps: int = 1,
):
    """Advance (q, p, v) over dt: exact attitude step, RK4 translation.

    omega_B and u are held constant over the step.
    """
    m = params.mass
    h = dt / substeps
    for i in range(substeps):
        R0 = q_GB.to_matrix()
        Rh = quat_mul(q_GB, quat_exp(omega_B * (0.5 * h))).to_matrix()
        R1 = quat_mul(q_GB, quat_exp(omega_B * h)).to_matrix()

        def vdot(R, vel):
            v_B = R.T @ vel
            return R @ body_force(params, u, v_B, res_model.force(v_B)) / m + GRAVITY_W

        k1 = vdot(R0, v)
        k2 = vdot(Rh, v + 0.5 * h * k1)
        k3 = vdot(Rh, v + 0.5 * h * k2)
        k4 = vdot(R1, v + h * k3)
        dv = (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        # position via the same RK4 stage velocities
        dp = (h / 6.0) * (v + 2 * (v + 0.5 * h * k1) + 2 * (v + 0.5 * h * k2) + (v + h * k3))
        p = p + dp
        v = v + dv
        q_GB = quat_mul(q_GB, quat_exp(omega_B * h))
    return q_GB, p, v


def _desired_attitude(f_des: np.ndarray, yaw: float) -> UnitQuaternion:
    """Body attitude whose z axis carries f_des at the given yaw."""
    n = np.linalg.norm(f_des)
    z_b = f_des / n if n > 1e-6 else E3.copy()
    x_c = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_b = np.cross(z_b, x_c)
    ny = np.linalg.norm(y_b)
    if ny < 1e-6:  # thrust parallel to the yaw heading; pick any consistent frame
        y_b = np.cross(z_b, np.array([0.0, 1.0, 0.0]))
        ny = np.linalg.norm(y_b)
    y_b /= ny
    x_b = np.cross(y_b, z_b)
    return UnitQuaternion.from_matrix(np.column_stack([x_b, y_b, z_b]))


def transform_imu_to_sensor_frame(sf_B, omega_B, alpha_B, q_IB: UnitQuaternion, t_IB):
    """Express COM specific force and body rates at an off-COM IMU.

    Inputs are (N,3) B-frame streams; returns (gyro_I, accel_I, alpha_I) in
    the I frame including the centripetal and tangential lever-arm terms.
    """
    R_IB = q_IB.to_matrix()
    t_IB = np.asarray(t_IB, dtype=float)
    omega_I = omega_B @ R_IB.T
    alpha_I = alpha_B @ R_IB.T
    accel_I = sf_B @ R_IB.T
    accel_I -= np.cross(omega_I, np.cross(omega_I, t_IB[None, :]))
    accel_I -= np.cross(alpha_I, t_IB[None, :])
    return omega_I, accel_I, alpha_I


def inject_extrinsics(log: FlightLog, q_IB: UnitQuaternion, t_IB) -> FlightLog:
    """Re-express a body-frame (identity-extrinsics) log at an off-COM IMU.

    Intended for noise-free logs: the measurement streams are treated as
    kinematic truth and transformed wholesale.  Identity extrinsics are a
    no-op.
    """
    if log.alpha_I is None:
        raise ValueError("inject_extrinsics needs the in-memory angular acceleration")
    omega_I, accel_I, alpha_I = transform_imu_to_sensor_frame(
        log.accel, log.gyro, log.alpha_I, q_IB, t_IB
    )
    q_BI = q_IB.conj()
    q_GI = np.empty_like(log.q_GI)
    for k in range(len(log)):
        q_GI[k] = quat_mul(UnitQuaternion.from_array(log.q_GI[k]), q_BI).as_array()
    return replace(
        log, gyro=omega_I, accel=accel_I, omega_I=omega_I, alpha_I=alpha_I, q_GI=q_GI
    )


def simulate_flight(
    params: DynParams,
    spec: TrajectorySpec,
    res_model: ResidualModel = ResidualModel(),
    noise: NoiseSpec = NoiseSpec(),
    f_imu: float = 400.0,
    f_rotor: float = 100.0,
    seed: int = 0,
    u_max: float = 3.0,
) -> FlightLog:
    """Closed-loop simulation producing a FlightLog.

    Feedforward from differential flatness (desired force -> body z and
    collective via tau * U_ss = |f_des|) plus PD position feedback; a P
    attitude law produces the body rate that the truth integrates.
    """
    if f_imu < f_rotor:
        raise ValueError("IMU rate must be at least the rotor rate")
    n = int(round(spec.duration * f_imu))
    if n < 10:
        raise ValueError("need at least 10 IMU samples")
    dt = 1.0 / f_imu
    rotor_step = max(1, int(round(f_imu / f_rotor)))

    rng = np.random.default_rng(seed)
    m = params.mass

    p_ref0, v_ref0, a_ref0, yaw0 = reference_trajectory(spec, 0.0)
    q = _desired_attitude(m * (a_ref0 - GRAVITY_W), yaw0)  # q_GB
    p = p_ref0.copy()
    v = v_ref0.copy()

    b_g = noise.b_gyro0.copy()
    b_a = noise.b_accel0.copy()

    imu_t = np.arange(n) * dt
    gyro_B = np.zeros((n, 3))
    sf_B = np.zeros((n, 3))  # specific force at COM, body frame
    q_GB_arr = np.zeros((n, 4))
    p_arr = np.zeros((n, 3))
    v_arr = np.zeros((n, 3))
    a_arr = np.zeros((n, 3))
    fres_arr = np.zeros((n, 3))
    bg_arr = np.zeros((n, 3))
    ba_arr = np.zeros((n, 3))
    rotor_rows = []

    u = RotorSpeeds.hover(params)
    omega_B = np.zeros(3)
    for k in range(n):
        t = imu_t[k]
        p_ref, v_ref, a_ref, yaw = reference_trajectory(spec, t)
        err = np.linalg.norm(p - p_ref)
        if err > DIVERGENCE_LIMIT:
            raise SimDiverged(k, err)

        f_des = m * (a_ref - GRAVITY_W + KP_POS * (p_ref - p) + KD_POS * (v_ref - v))
        if k % rotor_step == 0:
            u_ss = max(np.linalg.norm(f_des), 0.1 * m * 9.8) / params.tau
            ui = min(math.sqrt(u_ss / 4.0), u_max)  # actuator saturation
            u = RotorSpeeds(np.full(4, ui))
            rotor_rows.append((t, u.u.copy()))

        q_des = _desired_attitude(f_des, yaw)
        omega_B = K_ATT * quat_log(quat_mul(q.conj(), q_des))
        w_norm = np.linalg.norm(omega_B)
        if w_norm > OMEGA_MAX:
            omega_B *= OMEGA_MAX / w_norm

        # log truth at time t (u and omega are the values held over [t, t+dt))
        R = q.to_matrix()
        v_B = R.T @ v
        f_res = res_model.force(v_B)
        a_com = R @ body_force(params, u, v_B, f_res) / m + GRAVITY_W
        gyro_B[k] = omega_B
        sf_B[k] = R.T @ (a_com - GRAVITY_W)
        q_GB_arr[k] = (q.w, q.x, q.y, q.z)
        p_arr[k] = p
        v_arr[k] = v
        a_arr[k] = a_com
        fres_arr[k] = f_res
        bg_arr[k] = b_g
        ba_arr[k] = b_a

        q, p, v = propagate_truth(q, p, v, params, u, omega_B, res_model, dt)
        walk_g = noise.sigma_bg_walk * math.sqrt(dt)
        walk_a = noise.sigma_ba_walk * math.sqrt(dt)
        if np.any(walk_g > 0):
            b_g = b_g + rng.normal(0.0, 1.0, 3) * walk_g
        if np.any(walk_a > 0):
            b_a = b_a + rng.normal(0.0, 1.0, 3) * walk_a

    # body-rate derivative for the lever-arm terms (backward difference of
    # the zero-order-held command; the filter never reads it)
    alpha_B = np.zeros((n, 3))
    alpha_B[1:] = np.diff(gyro_B, axis=0) / dt

    omega_I, accel_I, alpha_I = transform_imu_to_sensor_frame(
        sf_B, gyro_B, alpha_B, params.q_IB, params.t_IB
    )

    gyro_meas = omega_I + bg_arr
    accel_meas = accel_I + ba_arr
    if np.any(noise.sigma_gyro > 0):
        gyro_meas = gyro_meas + rng.normal(0.0, 1.0, (n, 3)) * noise.sigma_gyro
    if np.any(noise.sigma_accel > 0):
        accel_meas = accel_meas + rng.normal(0.0, 1.0, (n, 3)) * noise.sigma_accel

    q_BI = params.q_IB.conj()
    q_GI = np.zeros((n, 4))
    for k in range(n):
        q_GI[k] = quat_mul(UnitQuaternion.from_array(q_GB_arr[k]), q_BI).as_array()

    rotor_t = np.array([r[0] for r in rotor_rows])
    rotor_u = np.array([r[1] for r in rotor_rows])
    return FlightLog(
        imu_t=imu_t,
        gyro=gyro_meas,
        accel=accel_meas,
        rotor_t=rotor_t,
        rotor_u=rotor_u,
        q_GI=q_GI,
        p_GB=p_arr,
        v_GB=v_arr,
        a_GB=a_arr,
        omega_I=omega_I,
        b_gyro=bg_arr,
        b_accel=ba_arr,
        f_res=fres_arr,
        alpha_I=alpha_I,
        f_imu=f_imu,
        f_rotor=f_imu / rotor_step,
    )
