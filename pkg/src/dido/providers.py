"""Pluggable observation providers standing in for the learned networks.

Three channels feed the filter: IMU bias estimates, residual force with
covariance, and velocity/position observations with covariances.  Each
channel runs in one of three modes:

* oracle  - ground truth from the log plus optional Gaussian corruption,
            drawn from the provider's own RNG stream;
* neural  - forward inference of the corresponding tiny network;
* null    - zeros (ablation baseline).

Providers are strictly causal: an output at time t is computed from samples
at or before t.  Velocity/position observations are sequence-relative and
anchored: the caller registers the anchor-state value (its own estimate, or
truth in consistency studies) and the provider adds it to the relative
output before emission.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import DynParams, ResidualForce
from .geom import UnitQuaternion, rotate
from .nninfer import WeightBundle, resnet1d_forward
from .nninfer.gru import gru_step, zero_state
from .simkit import FlightLog
from .dynamics import GRAVITY_W

VARIANCE_FLOOR = 1e-12


class InsufficientData(ValueError):
    """Window shorter than the provider's configured history."""


class MissingRotation(ValueError):
    """Velocity/position integration asked to run without an attitude."""


@dataclass(frozen=True)
class BiasEstimate:
    b_gyro: np.ndarray
    b_accel: np.ndarray
    t: float

    def __post_init__(self):
        object.__setattr__(self, "b_gyro", np.asarray(self.b_gyro, dtype=float))
        object.__setattr__(self, "b_accel", np.asarray(self.b_accel, dtype=float))
        if not (np.all(np.isfinite(self.b_gyro)) and np.all(np.isfinite(self.b_accel))):
            raise ValueError("bias estimate must be finite")


@dataclass(frozen=True)
class VpObservation:
    v_GI: np.ndarray
    p_GI: np.ndarray
    sigma2_v: np.ndarray
    sigma2_p: np.ndarray
    anchor_t: float
    t: float

    def __post_init__(self):
        for name in ("v_GI", "p_GI", "sigma2_v", "sigma2_p"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.sigma2_v <= 0) or np.any(self.sigma2_p <= 0):
            raise ValueError("observation variances must be positive")
        if self.t < self.anchor_t:
            raise ValueError("observation precedes its anchor")


@dataclass(frozen=True)
class DebiasConfig:
    mode: str = "oracle"
    corruption_gyro: float = 0.0
    corruption_accel: float = 0.0
    window: int = 20
    weights_gyro: str | WeightBundle | None = None
    weights_accel: str | WeightBundle | None = None


@dataclass(frozen=True)
class ResidualConfig:
    mode: str = "oracle"
    corruption: float = 0.0
    window: int = 20
    scale: float = 1.0
    weights: str | WeightBundle | None = None


@dataclass(frozen=True)
class VpConfig:
    mode: str = "oracle"
    corruption_v: float = 0.0
    corruption_p: float = 0.0
    window_m: int = 20
    seq_windows: int = 200
    scale_v: float = 1.0
    scale_p: float = 1.0
    anchor: str = "filter"  # "truth" for zero-mismatch consistency studies
    weights_v: tuple = ()  # three per-axis bundles / paths
    weights_p: tuple = ()


@dataclass(frozen=True)
class ProviderConfig:
    debias: DebiasConfig = field(default_factory=DebiasConfig)
    residual: ResidualConfig = field(default_factory=ResidualConfig)
    vp: VpConfig = field(default_factory=VpConfig)
    seed: int = 0


def _load_bundle(w) -> WeightBundle:
    if isinstance(w, WeightBundle):
        return w
    if w is None:
        raise ValueError("neural mode needs a weight file")
    return WeightBundle.load(w)


def _check_mode(mode: str):
    if mode not in ("oracle", "neural", "null"):
        raise ValueError(f"unknown provider mode {mode!r}")


class DebiasProvider:
    """Per-sample gyro/accel bias estimates from a trailing raw-IMU window."""

    def __init__(self, cfg: DebiasConfig, log: FlightLog | None = None,
                 rng: np.random.Generator | None = None):
        _check_mode(cfg.mode)
        if cfg.mode == "oracle" and log is None:
            raise ValueError("oracle debias needs the log")
        self.cfg = cfg
        self.log = log
        self.rng = rng or np.random.default_rng(0)
        self._gyro_hist: list[np.ndarray] = []
        self._accel_hist: list[np.ndarray] = []
        if cfg.mode == "neural":
            self._net_gyro = _load_bundle(cfg.weights_gyro)
            self._net_accel = _load_bundle(cfg.weights_accel)

    def estimate_window(self, gyro_win: np.ndarray, accel_win: np.ndarray, t: float) -> BiasEstimate:
        """Single-shot neural estimate from explicit windows."""
        gyro_win = np.asarray(gyro_win, dtype=float)
        accel_win = np.asarray(accel_win, dtype=float)
        if gyro_win.shape[0] < self.cfg.window or accel_win.shape[0] < self.cfg.window:
            raise InsufficientData(
                f"window {gyro_win.shape[0]} < history size {self.cfg.window}"
            )
        bg, _ = resnet1d_forward(self._net_gyro, gyro_win[-self.cfg.window:].T)
        ba, _ = resnet1d_forward(self._net_accel, accel_win[-self.cfg.window:].T)
        return BiasEstimate(bg, ba, t)

    def push(self, k: int, t: float, gyro: np.ndarray, accel: np.ndarray) -> BiasEstimate:
        cfg = self.cfg
        if cfg.mode == "null":
            return BiasEstimate(np.zeros(3), np.zeros(3), t)
        if cfg.mode == "oracle":
            bg = self.log.b_gyro[k].copy()
            ba = self.log.b_accel[k].copy()
            if cfg.corruption_gyro > 0:
                bg += self.rng.normal(0.0, cfg.corruption_gyro, 3)
            if cfg.corruption_accel > 0:
                ba += self.rng.normal(0.0, cfg.corruption_accel, 3)
            return BiasEstimate(bg, ba, t)
        self._gyro_hist.append(np.asarray(gyro, dtype=float))
        self._accel_hist.append(np.asarray(accel, dtype=float))
        if len(self._gyro_hist) > cfg.window:
            self._gyro_hist.pop(0)
            self._accel_hist.pop(0)
        if len(self._gyro_hist) < cfg.window:
            # warm-up: no history yet, de-biasing is a no-op
            return BiasEstimate(np.zeros(3), np.zeros(3), t)
        return self.estimate_window(np.array(self._gyro_hist), np.array(self._accel_hist), t)


class ResidualProvider:
    """Residual body force and diagonal covariance from a state/input window."""

    def __init__(self, cfg: ResidualConfig, log: FlightLog | None = None,
                 rng: np.random.Generator | None = None):
        _check_mode(cfg.mode)
        if cfg.mode == "oracle" and log is None:
            raise ValueError("oracle residual needs the log")
        self.cfg = cfg
        self.log = log
        self.rng = rng or np.random.default_rng(0)
        self._hist: list[np.ndarray] = []
        if cfg.mode == "neural":
            self._net = _load_bundle(cfg.weights)

    def estimate_window(self, feats_win: np.ndarray) -> ResidualForce:
        feats_win = np.asarray(feats_win, dtype=float)
        if feats_win.shape[0] < self.cfg.window:
            raise InsufficientData(
                f"window {feats_win.shape[0]} < history size {self.cfg.window}"
            )
        mean, xi = resnet1d_forward(self._net, feats_win[-self.cfg.window:].T)
        sigma2 = np.exp(2.0 * xi) * self.cfg.scale
        return ResidualForce(mean, np.maximum(sigma2, VARIANCE_FLOOR))

    def push(self, k: int, v_B: np.ndarray, omega_B: np.ndarray, u: np.ndarray) -> ResidualForce:
        cfg = self.cfg
        if cfg.mode == "null":
            return ResidualForce(np.zeros(3), np.full(3, VARIANCE_FLOOR))
        if cfg.mode == "oracle":
            f = self.log.f_res[k].copy()
            if cfg.corruption > 0:
                f += self.rng.normal(0.0, cfg.corruption, 3)
            sigma2 = max(cfg.corruption**2, VARIANCE_FLOOR) * cfg.scale
            return ResidualForce(f, np.full(3, sigma2))
        feat = np.concatenate([v_B, omega_B, u])
        self._hist.append(feat)
        if len(self._hist) > cfg.window:
            self._hist.pop(0)
        if len(self._hist) < cfg.window:
            return ResidualForce(np.zeros(3), np.full(3, VARIANCE_FLOOR))
        return self.estimate_window(np.array(self._hist))


class VpProvider:
    """Velocity/position observations per non-overlapping integration window.

    The neural path integrates the debiased, gravity-compensated specific
    force in the world frame over each window (the V-net feature), cascades
    the per-axis V and P GRUs, and emits sequence-relative outputs shifted
    by the registered anchor.  The oracle path emits truth-relative values
    plus corruption.
    """

    def __init__(self, cfg: VpConfig, log: FlightLog | None = None,
                 rng: np.random.Generator | None = None,
                 true_params: DynParams | None = None):
        _check_mode(cfg.mode)
        if cfg.mode == "oracle" and log is None:
            raise ValueError("oracle vp needs the log")
        if cfg.anchor not in ("filter", "truth"):
            raise ValueError(f"unknown anchor mode {cfg.anchor!r}")
        if cfg.anchor == "truth" and log is None:
            raise ValueError("truth anchoring needs the log")
        self.cfg = cfg
        self.log = log
        self.rng = rng or np.random.default_rng(0)
        self.true_params = true_params or DynParams()
        self._win_count = 0
        self._samples_in_win = 0
        self._windows_in_seq = 0
        self._anchor_t: float | None = None
        self._anchor_v: np.ndarray | None = None
        self._anchor_p: np.ndarray | None = None
        self._anchor_k: int | None = None
        self._dv = np.zeros(3)
        self._dd = np.zeros(3)
        self._win_t0: float | None = None
        if cfg.mode == "neural":
            self._nets_v = [_load_bundle(w) for w in cfg.weights_v]
            self._nets_p = [_load_bundle(w) for w in cfg.weights_p]
            if len(self._nets_v) != 3 or len(self._nets_p) != 3:
                raise ValueError("neural vp needs three V and three P bundles")
            self._state_v = [zero_state(b) for b in self._nets_v]
            self._state_p = [zero_state(b) for b in self._nets_p]

    # -- anchoring ----------------------------------------------------------

    def needs_anchor(self) -> bool:
        return self._anchor_t is None

    def set_anchor(self, k: int, t: float, v_GI: np.ndarray, p_GI: np.ndarray) -> None:
        """Register the sequence-start state (filter estimate or truth)."""
        self._anchor_t = t
        self._anchor_k = k
        if self.cfg.anchor == "truth":
            v_true, p_true = self._truth_vp(k)
            self._anchor_v, self._anchor_p = v_true, p_true
        else:
            self._anchor_v = np.asarray(v_GI, dtype=float).copy()
            self._anchor_p = np.asarray(p_GI, dtype=float).copy()
        self._windows_in_seq = 0
        if self.cfg.mode == "neural":
            self._state_v = [zero_state(b) for b in self._nets_v]
            self._state_p = [zero_state(b) for b in self._nets_p]
            self._seq_v_rel = np.zeros(3)

    def _truth_vp(self, k: int):
        """IMU-point velocity/position ground truth at sample k."""
        q_GI = self.log.truth_quat(k)
        t_IB = self.true_params.t_IB
        p_GI = self.log.p_GB[k] - rotate(q_GI, t_IB)
        v_GI = self.log.v_GB[k] - rotate(q_GI, np.cross(self.log.omega_I[k], t_IB))
        return v_GI, p_GI

    # -- streaming ----------------------------------------------------------

    def push(self, k: int, t: float, accel_debiased: np.ndarray,
             q_GI: UnitQuaternion | None, dt: float) -> VpObservation | None:
        if self._anchor_t is None:
            raise MissingRotation("push before set_anchor")
        cfg = self.cfg
        if cfg.mode == "neural":
            if q_GI is None:
                raise MissingRotation("neural vp needs the rotation stream")
            if self._samples_in_win == 0:
                self._dv = np.zeros(3)
                self._dd = np.zeros(3)
                self._win_t0 = t
            s = rotate(q_GI, accel_debiased) + GRAVITY_W
            self._dv = self._dv + s * dt
            self._dd = self._dd + self._dv * dt
        elif self._samples_in_win == 0:
            self._win_t0 = t
        self._samples_in_win += 1
        if self._samples_in_win < cfg.window_m:
            return None

        # window complete
        self._samples_in_win = 0
        self._windows_in_seq += 1
        obs = self._emit(k, t)
        if self._windows_in_seq >= cfg.seq_windows:
            self._anchor_t = None  # caller re-anchors before the next push
        return obs

    def _emit(self, k: int, t: float) -> VpObservation | None:
        cfg = self.cfg
        floor = VARIANCE_FLOOR
        if cfg.mode == "null":
            return None
        if cfg.mode == "oracle":
            v_true, p_true = self._truth_vp(k)
            v0, p0 = self._truth_vp(self._anchor_k)
            v_rel = v_true - v0
            p_rel = p_true - p0
            if cfg.corruption_v > 0:
                v_rel = v_rel + self.rng.normal(0.0, cfg.corruption_v, 3)
            if cfg.corruption_p > 0:
                p_rel = p_rel + self.rng.normal(0.0, cfg.corruption_p, 3)
            s2v = max(cfg.corruption_v**2, floor) * cfg.scale_v
            s2p = max(cfg.corruption_p**2, floor) * cfg.scale_p
            return VpObservation(
                v_GI=self._anchor_v + v_rel,
                p_GI=self._anchor_p + p_rel,
                sigma2_v=np.full(3, s2v),
                sigma2_p=np.full(3, s2p),
                anchor_t=self._anchor_t,
                t=t,
            )
        # neural cascade, one GRU step per window and axis
        dt_win = t - self._win_t0
        v_rel = np.zeros(3)
        p_rel = np.zeros(3)
        s2v = np.zeros(3)
        s2p = np.zeros(3)
        for ax in range(3):
            y, self._state_v[ax] = gru_step(
                self._nets_v[ax], np.array([self._dv[ax], dt_win]), self._state_v[ax]
            )
            v_rel[ax] = y[0]
            s2v[ax] = np.exp(2.0 * y[1]) if y.shape[0] > 1 else floor
            # displacement feature per the cascade: end-of-window velocity
            # times the window duration minus the double integral
            disp = (v_rel[ax] + self._anchor_v[ax]) * dt_win - self._dd[ax]
            yp, self._state_p[ax] = gru_step(
                self._nets_p[ax], np.array([disp, dt_win]), self._state_p[ax]
            )
            p_rel[ax] = yp[0]
            s2p[ax] = np.exp(2.0 * yp[1]) if yp.shape[0] > 1 else floor
        return VpObservation(
            v_GI=self._anchor_v + v_rel,
            p_GI=self._anchor_p + p_rel,
            sigma2_v=np.maximum(s2v * cfg.scale_v, floor),
            sigma2_p=np.maximum(s2p * cfg.scale_p, floor),
            anchor_t=self._anchor_t,
            t=t,
        )


def integrate_window_velocity(accel_debiased: np.ndarray, q_GI_seq, dt: float) -> np.ndarray:
    """Gravity-compensated specific-force integral over a window (V-net feature).

    Rotates each debiased accel sample into the world frame with the supplied
    attitude stream and forward-Euler integrates; exactly zero for a static
    hover with perfect de-biasing.
    """
    accel_debiased = np.asarray(accel_debiased, dtype=float)
    if len(q_GI_seq) != accel_debiased.shape[0]:
        raise MissingRotation("attitude stream length mismatch")
    dv = np.zeros(3)
    for a, q in zip(accel_debiased, q_GI_seq):
        dv += (rotate(q, a) + GRAVITY_W) * dt
    return dv
