"""TOML experiment configuration: schema validation, seed substreams, and
construction of simulator / filter / provider objects.

Unknown keys are rejected so config typos fail loudly.  All randomness
derives from the single top-level seed through named substreams, which keeps
multi-component experiments bitwise reproducible.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

import numpy as np

from .dynamics import DynParams
from .ekf import DEFAULT_INIT_VAR, DEFAULT_TAU, FilterConfig, rot_initial, trans_initial
from .geom import UnitQuaternion
from .providers import DebiasConfig, ProviderConfig, ResidualConfig, VpConfig
from .simkit import NoiseSpec, ResidualModel, TrajectorySpec


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "seed": int,
    "sim": {
        "kind": str, "duration": float, "yaw_mode": str, "height": float,
        "radius": float, "period": float, "scale": float, "traj_seed": int,
        "n_sinusoids": int, "max_speed": float, "f_imu": float, "f_rotor": float,
        "u_max": float,
        "residual": {"model": str, "k": float, "c": list},
    },
    "noise": {
        "sigma_gyro": (float, list), "sigma_accel": (float, list),
        "sigma_bg_walk": (float, list), "sigma_ba_walk": (float, list),
        "b_gyro0": list, "b_accel0": list,
    },
    "params": {
        "mass": float, "tau": float, "d": list, "q_ib": list, "t_ib": list,
    },
    "filter": {
        "sigma_gyro": float, "sigma_accel": float,
        "grav_update_every": int, "grav_sigma_scale": float,
        "accel_update_every": int, "gate_prob": float, "lowpass_hz": float,
        "q_p": float, "q_v": float, "q_tau": float, "q_d": float,
        "q_theta": float, "q_t": float,
        "init": {"tau": float, "d": list, "q_ib": list, "t_ib": list},
        "cov": {"rot": float, "p": float, "v": float, "tau": float, "d": list,
                "q_ib": float, "t_ib": float},
    },
    "provider": {
        "debias": {"mode": str, "corruption_gyro": float, "corruption_accel": float,
                   "window": int, "weights_gyro": str, "weights_accel": str},
        "residual": {"mode": str, "corruption": float, "window": int, "scale": float,
                     "weights": str},
        "vp": {"mode": str, "corruption_v": float, "corruption_p": float,
               "window_m": int, "seq_windows": int, "scale_v": float, "scale_p": float,
               "anchor": str, "weights_v": list, "weights_p": list},
    },
    "perturb": {"tau_frac": float, "d_frac": float, "d_abs": float,
                "t_ib_abs": float, "q_ib_rad": float},
    "mc": {"runs": int, "init_from_cov": bool},
}


def _check_keys(doc: dict, schema: dict, path: str = "") -> None:
    for key, val in doc.items():
        where = f"{path}.{key}" if path else key
        if key not in schema:
            raise ConfigError(f"unknown config key {where!r}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"{where} must be a table")
            _check_keys(val, expected, where)
        elif isinstance(expected, tuple):
            if not isinstance(val, (*expected, int)):
                raise ConfigError(f"{where} has wrong type")
        elif expected is float:
            if not isinstance(val, (int, float)):
                raise ConfigError(f"{where} must be a number")
        elif not isinstance(val, expected):
            raise ConfigError(f"{where} must be {expected.__name__}")


def load_config(path) -> dict:
    text = Path(path).read_text()
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    _check_keys(doc, _SCHEMA)
    return doc


def substream(seed: int, name: str) -> np.random.Generator:
    """Named, independent RNG stream derived from the experiment seed."""
    digest = hashlib.sha256(name.encode()).digest()[:8]
    key = int.from_bytes(digest, "little")
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


def substream_seed(seed: int, name: str, index: int = 0) -> int:
    digest = hashlib.sha256(name.encode()).digest()[:8]
    key = int.from_bytes(digest, "little")
    return int(np.random.SeedSequence([seed, key, index]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# object construction


def _vec3(doc, key, default):
    v = doc.get(key, default)
    return np.broadcast_to(np.asarray(v, dtype=float), (3,)).copy()


def build_trajectory(doc: dict) -> TrajectorySpec:
    sim = doc.get("sim", {})
    return TrajectorySpec(
        kind=sim.get("kind", "hover"),
        duration=float(sim.get("duration", 10.0)),
        yaw_mode=sim.get("yaw_mode", "constant"),
        height=float(sim.get("height", 1.0)),
        radius=float(sim.get("radius", 1.0)),
        period=float(sim.get("period", 8.0)),
        scale=float(sim.get("scale", 1.0)),
        seed=int(sim.get("traj_seed", doc.get("seed", 0))),
        n_sinusoids=int(sim.get("n_sinusoids", 3)),
        max_speed=float(sim.get("max_speed", 1.5)),
    )


def build_residual_model(doc: dict) -> ResidualModel:
    res = doc.get("sim", {}).get("residual", {})
    return ResidualModel(
        kind=res.get("model", "zero"),
        c=np.asarray(res.get("c", [0.0, 0.0, 0.0]), dtype=float),
        k=float(res.get("k", 0.0)),
    )


def build_noise(doc: dict) -> NoiseSpec:
    nz = doc.get("noise", {})
    return NoiseSpec(
        sigma_gyro=_vec3(nz, "sigma_gyro", 0.0),
        sigma_accel=_vec3(nz, "sigma_accel", 0.0),
        sigma_bg_walk=_vec3(nz, "sigma_bg_walk", 0.0),
        sigma_ba_walk=_vec3(nz, "sigma_ba_walk", 0.0),
        b_gyro0=_vec3(nz, "b_gyro0", 0.0),
        b_accel0=_vec3(nz, "b_accel0", 0.0),
    )


def build_params(doc: dict) -> DynParams:
    p = doc.get("params", {})
    q_ib = p.get("q_ib", [1.0, 0.0, 0.0, 0.0])
    return DynParams(
        mass=float(p.get("mass", 1.0)),
        tau=float(p.get("tau", DEFAULT_TAU)),
        d=np.asarray(p.get("d", [0.0, 0.0, 0.0]), dtype=float),
        q_IB=UnitQuaternion.from_array(q_ib),
        t_IB=np.asarray(p.get("t_ib", [0.0, 0.0, 0.0]), dtype=float),
    )


def build_filter_config(doc: dict) -> FilterConfig:
    f = doc.get("filter", {})
    return FilterConfig(
        mass=float(doc.get("params", {}).get("mass", 1.0)),
        sigma_gyro=float(f.get("sigma_gyro", 2e-3)),
        sigma_accel=float(f.get("sigma_accel", 2e-2)),
        grav_update_every=int(f.get("grav_update_every", 40)),
        grav_sigma_scale=float(f.get("grav_sigma_scale", 30.0)),
        accel_update_every=int(f.get("accel_update_every", 1)),
        gate_prob=f.get("gate_prob"),
        lowpass_hz=float(f.get("lowpass_hz", 15.0)),
        q_p=float(f.get("q_p", 0.0)),
        q_v=float(f.get("q_v", 0.0)),
        q_tau=float(f.get("q_tau", 0.0)),
        q_d=float(f.get("q_d", 0.0)),
        q_theta=float(f.get("q_theta", 0.0)),
        q_t=float(f.get("q_t", 0.0)),
    )


def build_provider_config(doc: dict, weights_dir: Path | None = None) -> ProviderConfig:
    pv = doc.get("provider", {})

    def resolve(name):
        if name is None:
            return None
        path = Path(name)
        if weights_dir is not None and not path.is_absolute():
            path = weights_dir / path
        if not path.exists():
            raise ConfigError(f"weight file {path} does not exist")
        return str(path)

    de = pv.get("debias", {})
    re_ = pv.get("residual", {})
    vp = pv.get("vp", {})
    return ProviderConfig(
        debias=DebiasConfig(
            mode=de.get("mode", "oracle"),
            corruption_gyro=float(de.get("corruption_gyro", 0.0)),
            corruption_accel=float(de.get("corruption_accel", 0.0)),
            window=int(de.get("window", 20)),
            weights_gyro=resolve(de.get("weights_gyro")),
            weights_accel=resolve(de.get("weights_accel")),
        ),
        residual=ResidualConfig(
            mode=re_.get("mode", "oracle"),
            corruption=float(re_.get("corruption", 0.0)),
            window=int(re_.get("window", 20)),
            scale=float(re_.get("scale", 1.0)),
            weights=resolve(re_.get("weights")),
        ),
        vp=VpConfig(
            mode=vp.get("mode", "oracle"),
            corruption_v=float(vp.get("corruption_v", 0.0)),
            corruption_p=float(vp.get("corruption_p", 0.0)),
            window_m=int(vp.get("window_m", 20)),
            seq_windows=int(vp.get("seq_windows", 200)),
            scale_v=float(vp.get("scale_v", 1.0)),
            scale_p=float(vp.get("scale_p", 1.0)),
            anchor=vp.get("anchor", "filter"),
            weights_v=tuple(resolve(w) for w in vp.get("weights_v", [])),
            weights_p=tuple(resolve(w) for w in vp.get("weights_p", [])),
        ),
        seed=substream_seed(int(doc.get("seed", 0)), "providers"),
    )


def build_initial_states(doc: dict, log):
    """Filter initial states: truth pose at t0, Table-style parameter values."""
    f = doc.get("filter", {})
    init = f.get("init", {})
    cov = f.get("cov", {})
    var = dict(DEFAULT_INIT_VAR)
    for key in ("rot", "p", "v", "tau", "q_ib", "t_ib"):
        if key in cov:
            var[key] = float(cov[key])
    d_var = cov.get("d", DEFAULT_INIT_VAR["d"])
    var["d"] = float(d_var if not isinstance(d_var, list) else np.mean(d_var))
    rot0 = rot_initial(log.truth_quat(0), var["rot"])
    q_ib0 = init.get("q_ib", [1.0, 0.0, 0.0, 0.0])
    trans0 = trans_initial(
        log.p_GB[0],
        log.v_GB[0],
        tau=float(init.get("tau", DEFAULT_TAU)),
        d=np.asarray(init.get("d", [0.0, 0.0, 0.0]), dtype=float),
        q_IB=UnitQuaternion.from_array(q_ib0),
        t_IB=np.asarray(init.get("t_ib", [0.0, 0.0, 0.0]), dtype=float),
        init_var=var,
    )
    return rot0, trans0


def dump_toml(doc: dict) -> str:
    """Minimal TOML writer for the frozen resolved config (2-level tables)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, (int, float)):
            return repr(v)
        if isinstance(v, str):
            return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        if isinstance(v, (list, tuple, np.ndarray)):
            return "[" + ", ".join(fmt(x) for x in v) + "]"
        raise TypeError(f"cannot serialize {type(v)}")

    lines = []

    def emit(table: dict, prefix: str):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        nested = {k: v for k, v in table.items() if isinstance(v, dict)}
        if prefix and scalars:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            lines.append(f"{k} = {fmt(v)}")
        if prefix and scalars:
            lines.append("")
        for k, v in nested.items():
            emit(v, f"{prefix}.{k}" if prefix else k)

    top_scalars = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    for k, v in top_scalars.items():
        lines.append(f"{k} = {fmt(v)}")
    lines.append("")
    for k, v in doc.items():
        if isinstance(v, dict):
            emit(v, k)
    return "\n".join(lines) + "\n"
