"""Command-line entry points: simulate, estimate, evaluate, param-study,
mc-consistency, gradcheck.

Exit codes: 0 success, 1 usage/IO error, 2 simulation divergence, 3 filter
divergence.  Every command is reproducible from the frozen config plus seed.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import config as cfgmod
from .config import ConfigError
from .ekf import (
    I_D,
    I_P,
    I_T,
    I_TAU,
    I_TH,
    I_V,
    NonFiniteState,
    TransStageState,
    run_two_stage,
)
from .geom import UnitQuaternion, quat_exp, quat_mul
from .metrics import TrajectoryPair, afe, evaluate_pair
from .nninfer import standard_gradient_report
from .simkit import FlightLog, SimDiverged, simulate_flight

EXIT_USAGE = 1
EXIT_SIM_DIVERGED = 2
EXIT_FILTER_DIVERGED = 3


class _Cli(click.Group):
    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SimDiverged as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_SIM_DIVERGED)
        except NonFiniteState as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_FILTER_DIVERGED)
        except (ConfigError, FileNotFoundError, OSError, ValueError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_USAGE)


@click.group(cls=_Cli)
def main():
    """Quadrotor inertial-dynamical odometry toolkit."""


def _load(config_path, seed_override=None) -> dict:
    doc = cfgmod.load_config(config_path)
    if seed_override is not None:
        doc["seed"] = int(seed_override)
    doc.setdefault("seed", 0)
    return doc


def _simulate_from(doc: dict) -> FlightLog:
    sim = doc.get("sim", {})
    return simulate_flight(
        cfgmod.build_params(doc),
        cfgmod.build_trajectory(doc),
        res_model=cfgmod.build_residual_model(doc),
        noise=cfgmod.build_noise(doc),
        f_imu=float(sim.get("f_imu", 400.0)),
        f_rotor=float(sim.get("f_rotor", 100.0)),
        seed=cfgmod.substream_seed(doc["seed"], "sim"),
        u_max=float(sim.get("u_max", 3.0)),
    )


def _run_filter(doc: dict, log: FlightLog, provider_cfg=None,
                rot0=None, trans0=None, store_pv=False):
    fcfg = cfgmod.build_filter_config(doc)
    if store_pv:
        fcfg = replace(fcfg, store_pv_cov=True)
    if provider_cfg is None:
        provider_cfg = cfgmod.build_provider_config(doc)
    r0, t0 = cfgmod.build_initial_states(doc, log)
    return run_two_stage(
        log, provider_cfg, fcfg, rot0 or r0, trans0 or t0,
        true_params=cfgmod.build_params(doc),
    ), fcfg


def _metrics_against_truth(res, log: FlightLog) -> dict:
    pair = TrajectoryPair(
        t=res.t, est_q=res.q_GI, est_p=res.p, true_q=log.q_GI, true_p=log.p_GB
    )
    out = evaluate_pair(pair)
    if res.f_res_hat is not None:
        out["afe"] = afe(log.f_res, res.f_res_hat)
    return out


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None, help="override the config seed")
def simulate(config_path, out_dir, seed):
    """Generate a flight log (imu.csv, rotor.csv, truth.csv)."""
    doc = _load(config_path, seed)
    log = _simulate_from(doc)
    out = Path(out_dir)
    log.save(out)
    (out / "config.resolved.toml").write_text(cfgmod.dump_toml(doc))
    click.echo(f"wrote {len(log)} IMU samples to {out}")


@main.command()
@click.option("--log", "log_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--weights", "weights_dir", type=click.Path(exists=True), default=None,
              help="directory for relative weight-file paths")
def estimate(log_dir, config_path, out_dir, seed, weights_dir):
    """Run the two-stage filter over a recorded log."""
    doc = _load(config_path, seed)
    log = FlightLog.load(log_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pcfg = cfgmod.build_provider_config(
        doc, weights_dir=Path(weights_dir) if weights_dir else None
    )
    try:
        res, _ = _run_filter(doc, log, provider_cfg=pcfg)
    except NonFiniteState as e:
        (out / "summary.json").write_text(
            json.dumps({"status": "diverged", "step": e.step})
        )
        raise
    res.estimate_csv(out / "estimate.csv")
    summary = res.summary()
    summary["status"] = "ok"
    summary["metrics"] = _metrics_against_truth(res, log)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    click.echo(f"ATE {summary['metrics']['ate']:.6f} m over {res.t[-1] - res.t[0]:.1f} s")


@main.command()
@click.option("--estimate", "est_csv", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_csv", required=True, type=click.Path(exists=True))
@click.option("--out", "out_json", required=True, type=click.Path())
@click.option("--errors-csv", type=click.Path(), default=None,
              help="also write per-sample errors for external plotting")
def evaluate(est_csv, truth_csv, out_json, errors_csv):
    """Compute ATE/ARE/RTE/RRE/TD/RD between an estimate and ground truth."""
    est = np.loadtxt(est_csv, delimiter=",", skiprows=1, ndmin=2)
    truth = np.loadtxt(truth_csv, delimiter=",", skiprows=1, ndmin=2)
    pair = TrajectoryPair.align(
        est[:, 0], est[:, 1:5], est[:, 5:8],
        truth[:, 0], truth[:, 1:5], truth[:, 5:8],
    )
    out = evaluate_pair(pair)
    Path(out_json).write_text(json.dumps(out, indent=1))
    if errors_csv:
        perr = np.linalg.norm(pair.est_p - pair.true_p, axis=1)
        aerr = np.array([
            UnitQuaternion.from_array(pair.est_q[i]).angle_to(
                UnitQuaternion.from_array(pair.true_q[i]))
            for i in range(pair.t.size)
        ])
        np.savetxt(errors_csv, np.column_stack([pair.t, perr, aerr]),
                   fmt="%.17g", delimiter=",", header="t,p_err,rot_err", comments="")
    click.echo(json.dumps(out))


def _perturbed_initials(doc: dict, log: FlightLog, rng: np.random.Generator):
    pert = doc.get("perturb", {})
    params = cfgmod.build_params(doc)
    rot0, trans0 = cfgmod.build_initial_states(doc, log)
    tau_frac = float(pert.get("tau_frac", 0.2))
    d_frac = float(pert.get("d_frac", 0.0))
    d_abs = float(pert.get("d_abs", 0.0))
    t_abs = float(pert.get("t_ib_abs", 0.0))
    q_rad = float(pert.get("q_ib_rad", 0.0))
    tau0 = params.tau * (1.0 + rng.uniform(-tau_frac, tau_frac))
    d0 = params.d * (1.0 + rng.uniform(-d_frac, d_frac, 3)) + rng.uniform(-d_abs, d_abs, 3)
    t0 = params.t_IB + rng.uniform(-t_abs, t_abs, 3)
    q0 = params.q_IB
    if q_rad > 0:
        q0 = quat_mul(q0, quat_exp(rng.uniform(-q_rad, q_rad, 3)))
    trans0 = replace(trans0, tau=max(tau0, 1e-3), d=np.maximum(d0, 0.0), t_IB=t0, q_IB=q0)
    return rot0, trans0


@main.command("param-study")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--runs", type=int, default=6)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=2)
def param_study(config_path, runs, out_dir, seed, jobs):
    """Repeated runs with perturbed initial parameters; emits traces."""
    doc = _load(config_path, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = _simulate_from(doc)
    params = cfgmod.build_params(doc)

    def one(i):
        rng = cfgmod.substream(doc["seed"], f"perturb-{i}")
        rot0, trans0 = _perturbed_initials(doc, log, rng)
        res, _ = _run_filter(doc, log, rot0=rot0, trans0=trans0)
        return i, trans0, res

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = sorted(pool.map(one, range(runs)), key=lambda r: r[0])

    report = {"true_tau": params.tau, "true_d": params.d.tolist(), "runs": []}
    for i, trans0, res in results:
        trace = np.column_stack([res.t, res.tau, res.d, res.q_IB, res.t_IB])
        np.savetxt(
            out / f"params_run{i}.csv", trace, fmt="%.17g", delimiter=",",
            header="t,tau,dx,dy,dz,eqw,eqx,eqy,eqz,etx,ety,etz", comments="",
        )
        report["runs"].append({
            "run": i,
            "tau0": trans0.tau,
            "d0": trans0.d.tolist(),
            "final_tau": float(res.tau[-1]),
            "final_d": res.d[-1].tolist(),
            "final_t_IB": res.t_IB[-1].tolist(),
            "t_IB_var_ratio": (res.P_diag[-1][I_T] / res.P_diag[0][I_T]).tolist(),
        })
    (out / "param_study.json").write_text(json.dumps(report, indent=1))
    taus = [r["final_tau"] for r in report["runs"]]
    click.echo(f"final tau spread: [{min(taus):.4f}, {max(taus):.4f}] (true {params.tau})")


def _sample_initial_errors(trans0: TransStageState, rng: np.random.Generator):
    """Draw a joint initial error from the filter's own P0 (consistency runs)."""
    L = np.linalg.cholesky(trans0.P + 1e-18 * np.eye(trans0.P.shape[0]))
    dx = L @ rng.standard_normal(trans0.P.shape[0])
    return replace(
        trans0,
        p=trans0.p + dx[I_P],
        v=trans0.v + dx[I_V],
        tau=max(trans0.tau + dx[I_TAU], 1e-3),
        d=trans0.d + dx[I_D],
        q_IB=quat_mul(trans0.q_IB, quat_exp(dx[I_TH])),
        t_IB=trans0.t_IB + dx[I_T],
    )


@main.command("mc-consistency")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--runs", type=int, default=50)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--jobs", type=int, default=2)
def mc_consistency(config_path, runs, out_dir, seed, jobs):
    """Monte-Carlo NEES of [dp, dv] against the 95% chi^2 band for 6 DOF."""
    doc = _load(config_path, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nees_mat, mean_nees, band, frac = run_mc_consistency(doc, runs, jobs)
    np.savetxt(out / "nees.csv", nees_mat.T, fmt="%.8g", delimiter=",")
    report = {
        "runs": runs,
        "dof": 6,
        "mean_nees": mean_nees,
        "band_95": list(band),
        "inside": bool(band[0] <= mean_nees <= band[1]),
        "fraction_of_time_in_band": frac,
    }
    (out / "nees_report.json").write_text(json.dumps(report, indent=1))
    click.echo(f"mean NEES {mean_nees:.3f}, 95% band [{band[0]:.2f}, {band[1]:.2f}]")


def run_mc_consistency(doc: dict, runs: int, jobs: int = 2):
    """Shared implementation for the CLI and the acceptance suite."""
    from scipy.stats import chi2

    def one(i):
        run_doc = dict(doc)
        run_seed = cfgmod.substream_seed(doc["seed"], "mc", i)
        sim = dict(run_doc.get("sim", {}))
        log = simulate_flight(
            cfgmod.build_params(run_doc),
            cfgmod.build_trajectory(run_doc),
            res_model=cfgmod.build_residual_model(run_doc),
            noise=cfgmod.build_noise(run_doc),
            f_imu=float(sim.get("f_imu", 400.0)),
            f_rotor=float(sim.get("f_rotor", 100.0)),
            seed=run_seed,
            u_max=float(sim.get("u_max", 3.0)),
        )
        rot0, trans0 = cfgmod.build_initial_states(run_doc, log)
        if run_doc.get("mc", {}).get("init_from_cov", True):
            rng = cfgmod.substream(doc["seed"], f"mc-init-{i}")
            trans0 = _sample_initial_errors(trans0, rng)
        pcfg = cfgmod.build_provider_config(run_doc)
        pcfg = replace(pcfg, seed=cfgmod.substream_seed(doc["seed"], "mc-prov", i))
        res, _ = _run_filter(
            run_doc, log, provider_cfg=pcfg, rot0=rot0, trans0=trans0, store_pv=True
        )
        err = np.concatenate([res.p - log.p_GB, res.v - log.v_GB], axis=1)
        nees = np.einsum("ki,kij,kj->k", err, np.linalg.inv(res.P_pv), err)
        return i, nees

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = sorted(pool.map(one, range(runs)), key=lambda r: r[0])
    nees_mat = np.array([nees for _, nees in results])  # (runs, steps)
    avg_t = nees_mat.mean(axis=0)
    mean_nees = float(avg_t.mean())
    dof = 6
    band = (
        float(chi2.ppf(0.025, runs * dof) / runs),
        float(chi2.ppf(0.975, runs * dof) / runs),
    )
    frac = float(np.mean((avg_t >= band[0]) & (avg_t <= band[1])))
    return nees_mat, mean_nees, band, frac


@main.command()
@click.option("--eps", type=float, default=1e-6)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_json", type=click.Path(), default=None)
def gradcheck(eps, seed, out_json):
    """Analytic vs central-difference gradients for every loss and net."""
    report = standard_gradient_report(eps=eps, seed=seed)
    worst = max(report.values())
    for name, err in sorted(report.items()):
        click.echo(f"{name:20s} max rel err {err:.3e}")
    click.echo(f"worst: {worst:.3e}")
    if out_json:
        Path(out_json).write_text(json.dumps(report, indent=1))
    if worst >= 1e-5:
        sys.exit(EXIT_USAGE)


if __name__ == "__main__":
    main()
