"""Central-difference validation of the hand-written reverse-mode gradients.

Each case composes a loss with a (small) network so the checked gradient is
the full parameter gradient a trainer would use.  Relative error is
max |ga - gn| / max(|ga|, |gn|, 1e-8) over every scalar parameter.
"""

from __future__ import annotations

import numpy as np

from ..dynamics import DynParams
from ..simkit import NoiseSpec, ResidualModel, TrajectorySpec, simulate_flight
from .bundle import random_bundle
from .gru import gru_backward, gru_forward
from .losses import (
    NonFiniteGradient,
    loss_debias_accel,
    loss_debias_gyro,
    loss_resdyn,
    loss_vp,
)
from .resnet1d import resnet1d_backward, resnet1d_forward

EPS_MIN, EPS_MAX = 1e-7, 1e-4


def central_difference_gradients(f, params: dict, eps: float) -> dict:
    """Two-sided finite differences of a scalar function of named arrays."""
    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(params)
            flat[i] = orig - eps
            fm = f(params)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic: dict, numeric: dict) -> float:
    """Norm-wise relative error per parameter array, maxed over parameters.

    Elementwise ratios are meaningless for components whose true gradient
    sits near the f64 finite-difference noise floor (~1e-11 absolute), so
    each parameter is compared as a whole:
    |ga - gn| / max(|ga|, |gn|, 1e-8) with Euclidean norms.
    """
    worst = 0.0
    for name in analytic:
        ga = analytic[name].reshape(-1)
        gn = numeric[name].reshape(-1)
        denom = max(float(np.linalg.norm(ga)), float(np.linalg.norm(gn)), 1e-8)
        worst = max(worst, float(np.linalg.norm(ga - gn)) / denom)
    return worst


def grad_check(f, analytic: dict, params: dict, eps: float = 1e-6) -> float:
    """Compare analytic parameter gradients against central differences."""
    if not (EPS_MIN <= eps <= EPS_MAX):
        raise ValueError(f"eps {eps} outside [{EPS_MIN}, {EPS_MAX}]")
    for name, g in analytic.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"analytic gradient for {name} non-finite")
    numeric = central_difference_gradients(f, params, eps)
    for name, g in numeric.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"numeric gradient for {name} non-finite")
    return max_relative_error(analytic, numeric)


# ---------------------------------------------------------------------------
# test fixtures: a short noisy log and small nets


def _fixture_log(seed: int = 0):
    params = DynParams(mass=1.0, tau=1.1, d=[0.2, 0.2, 0.1], t_IB=[0.03, -0.01, 0.02])
    noise = NoiseSpec(sigma_gyro=5e-3, sigma_accel=2e-2, b_gyro0=[0.01, -0.02, 0.015],
                      b_accel0=[0.05, -0.03, 0.02])
    log = simulate_flight(
        params,
        TrajectorySpec(kind="circle", duration=0.15, radius=0.5, period=2.0),
        res_model=ResidualModel(kind="quad_drag", k=0.1),
        noise=noise,
        seed=seed,
    )
    return params, log


def _window_outputs(bundle, channels, window_n, n_samples):
    """Per-window net outputs broadcast to every sample of the window."""
    outs, caches, spans = [], [], []
    for start in range(0, n_samples, window_n):
        lo = min(start, n_samples - window_n)
        mean, xi, cache = resnet1d_forward(bundle, channels[:, lo : lo + window_n], with_cache=True)
        outs.append((mean, xi))
        caches.append(cache)
        spans.append((start, min(start + window_n, n_samples)))
    return outs, caches, spans


def _accumulate_net_grads(bundle, caches, d_means, d_xis=None):
    total = None
    for idx, cache in enumerate(caches):
        g = resnet1d_backward(bundle, cache, d_means[idx],
                              None if d_xis is None else d_xis[idx])
        if total is None:
            total = g
        else:
            for k in total:
                total[k] += g[k]
    return total


def _debias_case(which: str, seed: int):
    _, log = _fixture_log(seed)
    n = len(log)
    window_n = 20
    dims = {"in_channels": 3, "width": 4, "window": window_n, "out": 3, "cov_head": False}
    # larger weights keep the gradient magnitudes well above FD roundoff
    bundle = random_bundle("resnet1d", dims, np.random.default_rng(seed + 100), scale=1.5)
    channels = (log.accel if which == "accel" else log.gyro).T
    loss_fn = loss_debias_accel if which == "accel" else loss_debias_gyro

    def value(params):
        b = bundle.with_params(params)
        outs, _, spans = _window_outputs(b, channels, window_n, n)
        est = np.zeros((n, 3))
        for (mean, _), (lo, hi) in zip(outs, spans):
            est[lo:hi] = mean
        return loss_fn(log, est, window_n)

    outs, caches, spans = _window_outputs(bundle, channels, window_n, n)
    est = np.zeros((n, 3))
    for (mean, _), (lo, hi) in zip(outs, spans):
        est[lo:hi] = mean
    _, d_est = loss_fn(log, est, window_n, return_grads=True)
    d_means = [d_est[lo:hi].sum(axis=0) for lo, hi in spans]
    analytic = _accumulate_net_grads(bundle, caches, d_means)
    return value, analytic, dict(bundle.params)


def _resdyn_case(phase: str, seed: int):
    params, log = _fixture_log(seed)
    n = len(log)
    window_n = 20
    dims = {"in_channels": 10, "width": 4, "window": window_n, "out": 3, "cov_head": True}
    bundle = random_bundle("resnet1d", dims, np.random.default_rng(seed + 200))
    # v_B, omega_B, u channels as the residual net sees them
    rows = log.rotor_row_for_imu()
    feats = np.zeros((10, n))
    for k in range(n):
        R_GB = log.truth_quat(k).to_matrix() @ params.q_IB.to_matrix()
        feats[0:3, k] = R_GB.T @ log.v_GB[k]
        feats[3:6, k] = params.q_IB.to_matrix().T @ log.omega_I[k]
        feats[6:10, k] = log.rotor_u[rows[k]]

    def per_sample(b):
        f_hat = np.zeros((n, 3))
        xi = np.zeros((n, 3))
        caches = []
        for t in range(n):
            lo = max(0, t - window_n + 1)
            lo = min(lo, n - window_n)
            mean, x, cache = resnet1d_forward(b, feats[:, lo : lo + window_n], with_cache=True)
            f_hat[t] = mean
            xi[t] = x
            caches.append(cache)
        return f_hat, xi, caches

    def value(p):
        b = bundle.with_params(p)
        f_hat, xi, _ = per_sample(b)
        return loss_resdyn(log, params, f_hat, xi, phase=phase)

    f_hat, xi, caches = per_sample(bundle)
    _, d_f, d_xi = loss_resdyn(log, params, f_hat, xi, phase=phase, return_grads=True)
    analytic = _accumulate_net_grads(bundle, caches, list(d_f), list(d_xi))
    return value, analytic, dict(bundle.params)


def _vp_case(phase: str, seed: int):
    rng = np.random.default_rng(seed + 300)
    steps = 12
    dims = {"in_dim": 2, "hidden": [4, 6, 6], "out": 2}
    bv = random_bundle("gru_vp", dims, rng)
    bp = random_bundle("gru_vp", dims, rng)
    x_v = np.column_stack([rng.normal(size=steps), np.full(steps, 0.05)])
    dd = rng.normal(scale=0.01, size=steps)  # double-integral feature (data)
    v0 = 0.3
    dt_win = 0.05
    v_true = np.cumsum(rng.normal(scale=0.1, size=steps))
    p_true = np.cumsum(v_true) * dt_win
    params = {f"v.{k}": v for k, v in bv.params.items()}
    params.update({f"p.{k}": v for k, v in bp.params.items()})

    def forward(p, with_cache=False):
        bvv = bv.with_params({k[2:]: v for k, v in p.items() if k.startswith("v.")})
        bpp = bp.with_params({k[2:]: v for k, v in p.items() if k.startswith("p.")})
        out_v = gru_forward(bvv, x_v, with_cache=with_cache)
        if with_cache:
            out_v, cache_v = out_v
        v_hat, xi_v = out_v[:, 0], out_v[:, 1]
        disp = (v_hat + v0) * dt_win - dd
        x_p = np.column_stack([disp, np.full(steps, dt_win)])
        out_p = gru_forward(bpp, x_p, with_cache=with_cache)
        if with_cache:
            out_p, cache_p = out_p
            return (v_hat, xi_v, out_p[:, 0], out_p[:, 1], bvv, bpp, cache_v, cache_p)
        return v_hat, xi_v, out_p[:, 0], out_p[:, 1]

    def value(p):
        v_hat, xi_v, p_hat, xi_p = forward(p)
        return loss_vp(v_true[None], p_true[None], v_hat[None], p_hat[None],
                       xi_v[None], xi_p[None], phase=phase)

    v_hat, xi_v, p_hat, xi_p, bvv, bpp, cache_v, cache_p = forward(params, with_cache=True)
    _, d_v, d_p, d_xiv, d_xip = loss_vp(
        v_true[None], p_true[None], v_hat[None], p_hat[None],
        xi_v[None], xi_p[None], phase=phase, return_grads=True,
    )
    if d_xiv is None:
        d_xiv = np.zeros_like(d_v)
        d_xip = np.zeros_like(d_p)
    d_out_p = np.column_stack([d_p[0], d_xip[0]])
    g_p, d_seq_p = gru_backward(bpp, cache_p, d_out_p)
    # back through the displacement feature disp = (v_hat + v0)*dt - dd
    d_vhat = d_v[0] + d_seq_p[:, 0] * dt_win
    d_out_v = np.column_stack([d_vhat, d_xiv[0]])
    g_v, _ = gru_backward(bvv, cache_v, d_out_v)
    analytic = {f"v.{k}": g for k, g in g_v.items()}
    analytic.update({f"p.{k}": g for k, g in g_p.items()})
    return value, analytic, params


def _resnet_direct_case(seed: int):
    rng = np.random.default_rng(seed + 400)
    dims = {"in_channels": 3, "width": 5, "window": 20, "out": 3, "cov_head": True}
    bundle = random_bundle("resnet1d", dims, rng)
    x = rng.normal(size=(3, 20))
    wm = rng.normal(size=3)
    wx = rng.normal(size=3)

    def value(p):
        mean, xi = resnet1d_forward(bundle.with_params(p), x)
        return float(wm @ mean + wx @ xi)

    mean, xi, cache = resnet1d_forward(bundle, x, with_cache=True)
    analytic = resnet1d_backward(bundle, cache, wm, wx)
    return value, analytic, dict(bundle.params)


def _gru_direct_case(seed: int):
    rng = np.random.default_rng(seed + 500)
    dims = {"in_dim": 2, "hidden": [4, 6, 6], "out": 2}
    bundle = random_bundle("gru_vp", dims, rng)
    seq = rng.normal(size=(10, 2))
    w = rng.normal(size=(10, 2))

    def value(p):
        return float(np.sum(w * gru_forward(bundle.with_params(p), seq)))

    out, cache = gru_forward(bundle, seq, with_cache=True)
    analytic, _ = gru_backward(bundle, cache, w)
    return value, analytic, dict(bundle.params)


_CASES = {
    "debias_accel": lambda seed: _debias_case("accel", seed),
    "debias_gyro": lambda seed: _debias_case("gyro", seed),
    "resdyn_mse": lambda seed: _resdyn_case("mse", seed),
    "resdyn_nll": lambda seed: _resdyn_case("nll", seed),
    "vp_mse": lambda seed: _vp_case("mse", seed),
    "vp_nll": lambda seed: _vp_case("nll", seed),
    "resnet1d_forward": _resnet_direct_case,
    "gru_forward": _gru_direct_case,
}


def standard_gradient_report(eps: float = 1e-6, seed: int = 0, cases=None) -> dict:
    """Max relative gradient error per loss/architecture case."""
    report = {}
    for name in cases or _CASES:
        value_fn, analytic, params = _CASES[name](seed)
        report[name] = grad_check(value_fn, analytic, params, eps)
    return report
