"""Training losses over integrated IMU increments, residual dynamics, and
sequence velocity/position predictions, with analytic gradients wrt the
network outputs.

All quaternion work here runs on raw 4-arrays (no renormalization, no sign
canonicalization) so the hand-written Jacobians are exact; inputs are unit
quaternions and stay unit because every factor is an exponential.

Phase handling: "mse" is a plain mean squared error; "nll" adds the log-det
of the diagonal covariance diag(e^{2xi}) and weights residuals by its
inverse.  For fixed residuals r the NLL is stationary in xi exactly at the
empirical variance e^{2xi} = mean(r^2).
"""

from __future__ import annotations

import math

import numpy as np

from ..dynamics import DynParams, GRAVITY_W, E3

DEFAULT_LOWPASS_HZ = 15.0


class NonFiniteGradient(ArithmeticError):
    """Analytic or numeric gradient came out non-finite."""


# ---------------------------------------------------------------------------
# raw quaternion algebra with Jacobians (wxyz 4-arrays)

_CONJ = np.diag([1.0, -1.0, -1.0, -1.0])


def _lmat(q):
    """L, with q (x) p == L(q) @ p."""
    w, x, y, z = q
    return np.array(
        [[w, -x, -y, -z], [x, w, -z, y], [y, z, w, -x], [z, -y, x, w]]
    )


def _rmat(p):
    """R, with q (x) p == R(p) @ q."""
    w, x, y, z = p
    return np.array(
        [[w, -x, -y, -z], [x, w, z, -y], [y, -z, w, x], [z, y, -x, w]]
    )


def _qmul(a, b):
    return _lmat(a) @ b


def _qexp(v):
    theta = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    h = 0.5 * theta
    if theta < 1e-8:
        k = 0.5 - theta * theta / 48.0
        return np.array([1.0 - h * h / 2.0, v[0] * k, v[1] * k, v[2] * k])
    k = math.sin(h) / theta
    return np.array([math.cos(h), v[0] * k, v[1] * k, v[2] * k])


def _qexp_jac(v):
    """(4,3) Jacobian of _qexp."""
    v = np.asarray(v, dtype=float)
    theta = float(np.linalg.norm(v))
    J = np.zeros((4, 3))
    if theta < 1e-8:
        J[0, :] = -0.25 * v
        J[1:, :] = 0.5 * np.eye(3) - np.outer(v, v) / 24.0
        return J
    h = 0.5 * theta
    k = math.sin(h) / theta
    J[0, :] = -0.5 * math.sin(h) * v / theta
    dk_dtheta = (0.5 * theta * math.cos(h) - math.sin(h)) / theta**2
    J[1:, :] = k * np.eye(3) + dk_dtheta * np.outer(v, v) / theta
    return J


def _qlog(q):
    w = q[0]
    vec = q[1:]
    s = float(np.linalg.norm(vec))
    theta = 2.0 * math.atan2(s, w)
    if s < 1e-8:
        return vec * (2.0 / w if w != 0 else 2.0)
    return vec * (theta / s)


def _qlog_jac(q):
    """(3,4) Jacobian of _qlog (scale-invariant atan2 extension)."""
    w = q[0]
    vec = q[1:]
    s = float(np.linalg.norm(vec))
    n2 = w * w + s * s
    J = np.zeros((3, 4))
    if s < 1e-8:
        J[:, 0] = -2.0 * vec
        J[:, 1:] = (2.0 / w) * np.eye(3)
        return J
    theta = 2.0 * math.atan2(s, w)
    k = theta / s
    J[:, 0] = -2.0 * vec / n2
    J[:, 1:] = k * np.eye(3) + ((2.0 * w / n2 - k) / s**2) * np.outer(vec, vec)
    return J


# ---------------------------------------------------------------------------
# signal conditioning


def lowpass_filter(x: np.ndarray, dt: float, cutoff_hz: float = DEFAULT_LOWPASS_HZ) -> np.ndarray:
    """First-order IIR y <- y + beta (x - y), beta from the cutoff at rate 1/dt."""
    beta = 1.0 - math.exp(-2.0 * math.pi * cutoff_hz * dt)
    y = np.zeros_like(x)
    y[0] = x[0]
    for k in range(1, x.shape[0]):
        y[k] = y[k - 1] + beta * (x[k] - y[k - 1])
    return y


def angular_rate_derivative(omega: np.ndarray, dt: float) -> np.ndarray:
    """Central-difference derivative, one-sided at the ends."""
    alpha = np.zeros_like(omega)
    if omega.shape[0] < 2:
        return alpha
    alpha[1:-1] = (omega[2:] - omega[:-2]) / (2.0 * dt)
    alpha[0] = (omega[1] - omega[0]) / dt
    alpha[-1] = (omega[-1] - omega[-2]) / dt
    return alpha


# ---------------------------------------------------------------------------
# de-bias losses over integrated increments


def _window_starts(n_samples: int, window_n: int):
    starts = list(range(0, n_samples - window_n, window_n))
    if not starts:
        raise ValueError(f"segment too short for window {window_n}")
    return starts


def loss_debias_accel(log, b_a_hat: np.ndarray, window_n: int, return_grads: bool = False):
    """Mean squared velocity-increment error of gravity-compensated integration.

    For each non-overlapping window [i, i+n) the debiased specific force is
    rotated to the world frame with ground-truth attitude, integrated by
    forward Euler, and gravity-compensated; the target is the true velocity
    increment v_{i+n} - v_i.
    """
    dt = log.dt
    b_a_hat = np.asarray(b_a_hat, dtype=float)
    starts = _window_starts(len(log), window_n)
    rots = [log.truth_quat(k).to_matrix() for k in range(len(log))]
    total = 0.0
    grads = np.zeros_like(b_a_hat)
    for i in starts:
        dv_hat = GRAVITY_W * (window_n * dt)
        for t in range(i, i + window_n):
            dv_hat = dv_hat + rots[t] @ (log.accel[t] - b_a_hat[t]) * dt
        err = (log.v_GB[i + window_n] - log.v_GB[i]) - dv_hat
        total += float(err @ err)
        if return_grads:
            # d err / d b_hat[t] = + R_t dt, dL/derr = 2 err / Nw
            for t in range(i, i + window_n):
                grads[t] += 2.0 * (rots[t].T @ err) * dt
    nw = len(starts)
    if not return_grads:
        return total / nw
    return total / nw, grads / nw


def loss_debias_gyro(log, b_w_hat: np.ndarray, window_n: int, return_grads: bool = False):
    """Mean squared log of the relative-rotation error of debiased integration.

    q_hat is the product of per-sample exponentials exp((gyro - b_hat) dt);
    the target is the true relative rotation over the window and the error
    is |log(conj(q_hat) (x) q_true)|^2.
    """
    dt = log.dt
    b_w_hat = np.asarray(b_w_hat, dtype=float)
    starts = _window_starts(len(log), window_n)
    total = 0.0
    grads = np.zeros_like(b_w_hat)
    for i in starts:
        factors = []
        q_hat = np.array([1.0, 0.0, 0.0, 0.0])
        for t in range(i, i + window_n):
            e_t = _qexp((log.gyro[t] - b_w_hat[t]) * dt)
            factors.append(e_t)
            q_hat = _qmul(q_hat, e_t)
        q0 = log.q_GI[i]
        q1 = log.q_GI[i + window_n]
        q_rel = _qmul(_CONJ @ q0, q1)
        m = _qmul(_CONJ @ q_hat, q_rel)
        e = _qlog(m)
        total += float(e @ e)
        if return_grads:
            # chain: phi_t -> E_t -> q_hat -> m -> e
            d_e = 2.0 * e
            d_m = _qlog_jac(m).T @ d_e
            d_qhat = (_rmat(q_rel) @ _CONJ).T @ d_m
            # prefix/suffix products around each factor
            prefixes = [np.array([1.0, 0.0, 0.0, 0.0])]
            for e_t in factors[:-1]:
                prefixes.append(_qmul(prefixes[-1], e_t))
            suffix = np.array([1.0, 0.0, 0.0, 0.0])
            for idx in range(window_n - 1, -1, -1):
                t = i + idx
                de_t = (_lmat(prefixes[idx]) @ _rmat(suffix)).T @ d_qhat
                dphi = _qexp_jac((log.gyro[t] - b_w_hat[t]) * dt).T @ de_t
                grads[t] += -dt * dphi
                suffix = _qmul(factors[idx], suffix)
    nw = len(starts)
    if not return_grads:
        return total / nw
    return total / nw, grads / nw


# ---------------------------------------------------------------------------
# residual-dynamics loss


def imu_point_accel_truth(log, params: DynParams) -> np.ndarray:
    """Ground-truth acceleration of the IMU point in the world frame."""
    if np.allclose(params.t_IB, 0.0):
        return log.a_GB.copy()
    if log.alpha_I is None:
        raise ValueError("off-COM IMU needs the in-memory angular acceleration")
    lever = np.cross(log.omega_I, np.cross(log.omega_I, params.t_IB)) + np.cross(
        log.alpha_I, params.t_IB
    )
    out = log.a_GB.copy()
    for k in range(len(log)):
        out[k] -= log.truth_quat(k).to_matrix() @ lever[k]
    return out


def loss_resdyn(
    log,
    params: DynParams,
    f_res_hat: np.ndarray,
    xi: np.ndarray,
    phase: str = "mse",
    b_w_hat: np.ndarray | None = None,
    cutoff_hz: float = DEFAULT_LOWPASS_HZ,
    return_grads: bool = False,
):
    """Residual-force loss against the body-frame dynamics acceleration.

    The target is reconstructed from ground-truth kinematics with low-pass
    filtered angular rate / angular acceleration lever corrections; the
    prediction runs the thrust-drag model with the candidate residual force.
    """
    if phase not in ("mse", "nll"):
        raise ValueError("phase must be 'mse' or 'nll'")
    dt = log.dt
    n = len(log)
    f_res_hat = np.asarray(f_res_hat, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if b_w_hat is None:
        b_w_hat = log.b_gyro
    omega_hat = lowpass_filter(log.gyro - b_w_hat, dt, cutoff_hz)
    alpha_hat = angular_rate_derivative(omega_hat, dt)
    a_imu_true = imu_point_accel_truth(log, params)
    rows = log.rotor_row_for_imu()
    R_IB = params.q_IB.to_matrix()
    g_a = -GRAVITY_W  # accelerometer-model gravity, +9.8 on z

    total = 0.0
    d_f = np.zeros_like(f_res_hat)
    d_xi = np.zeros_like(xi)
    inv_var = np.exp(-2.0 * xi)
    for t in range(n):
        R_GB = (log.truth_quat(t).to_matrix()) @ R_IB
        lever = np.cross(omega_hat[t], np.cross(omega_hat[t], params.t_IB)) + np.cross(
            alpha_hat[t], params.t_IB
        )
        target = R_GB.T @ a_imu_true[t] + R_IB.T @ lever
        u = log.rotor_u[rows[t]]
        u_ss = float(u @ u)
        u_s = float(u.sum())
        v_B = R_GB.T @ log.v_GB[t]
        pred = (
            params.tau * u_ss * E3 - u_s * (params.d * v_B) + f_res_hat[t]
        ) / params.mass - R_GB.T @ g_a
        e = target - pred
        if phase == "mse":
            total += float(e @ e)
            if return_grads:
                d_f[t] = -2.0 * e / params.mass / n
        else:
            total += float(np.sum(2.0 * xi[t]) + e @ (inv_var[t] * e)) / 2.0
            if return_grads:
                d_f[t] = -(inv_var[t] * e) / params.mass / n
                d_xi[t] = (1.0 - e * e * inv_var[t]) / n
    value = total / n
    if not return_grads:
        return value
    if not (np.all(np.isfinite(d_f)) and np.all(np.isfinite(d_xi))):
        raise NonFiniteGradient("loss_resdyn gradients non-finite")
    return value, d_f, d_xi


# ---------------------------------------------------------------------------
# sequence velocity/position loss


def loss_vp(
    v_true: np.ndarray,
    p_true: np.ndarray,
    v_hat: np.ndarray,
    p_hat: np.ndarray,
    xi_v: np.ndarray | None = None,
    xi_p: np.ndarray | None = None,
    phase: str = "mse",
    return_grads: bool = False,
):
    """Sequence loss over uniaxial velocity and position predictions.

    Arrays are (batch, steps); the 1/2 factor halves the summed v and p
    terms so a constant per-axis error e yields exactly e^2 in MSE phase.
    """
    if phase not in ("mse", "nll"):
        raise ValueError("phase must be 'mse' or 'nll'")
    v_true = np.asarray(v_true, dtype=float)
    p_true = np.asarray(p_true, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    p_hat = np.asarray(p_hat, dtype=float)
    if v_true.shape != v_hat.shape or p_true.shape != p_hat.shape:
        raise ValueError("prediction/truth shapes differ")
    nm = v_true.size
    ev = v_true - v_hat
    ep = p_true - p_hat
    if phase == "mse":
        value = float(np.sum(ev**2) + np.sum(ep**2)) / (2.0 * nm)
        if not return_grads:
            return value
        return value, -ev / nm, -ep / nm, None, None
    if xi_v is None or xi_p is None:
        raise ValueError("nll phase needs xi_v and xi_p")
    xi_v = np.asarray(xi_v, dtype=float)
    xi_p = np.asarray(xi_p, dtype=float)
    iv = np.exp(-2.0 * xi_v)
    ip = np.exp(-2.0 * xi_p)
    value = float(
        np.sum(2.0 * xi_v) + np.sum(2.0 * xi_p) + np.sum(ev**2 * iv) + np.sum(ep**2 * ip)
    ) / (2.0 * nm)
    if not return_grads:
        return value
    d_v = -ev * iv / nm
    d_p = -ep * ip / nm
    d_xiv = (1.0 - ev**2 * iv) / nm
    d_xip = (1.0 - ep**2 * ip) / nm
    return value, d_v, d_p, d_xiv, d_xip
