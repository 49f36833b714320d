import math

import numpy as np
import pytest

from dido.geom import UnitQuaternion, quat_mul
from dido.metrics import (
    EmptyTrajectory,
    TrajectoryPair,
    ZeroLength,
    afe,
    are,
    ate,
    evaluate_pair,
    rd,
    rre,
    rte,
    td,
)


def _make_traj(n=41, dt=0.025, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(n) * dt
    p = np.column_stack([np.sin(t), np.cos(t), 0.1 * t])
    q = np.zeros((n, 4))
    angle = 0.3 * np.sin(t)
    for i in range(n):
        q[i] = UnitQuaternion.from_axis_angle([0, 0, 1], angle[i]).as_array()
    return t, q, p, rng


def _pair(est_q, est_p, true_q, true_p, t):
    return TrajectoryPair(t=t, est_q=est_q, est_p=est_p, true_q=true_q, true_p=true_p)


def test_identical_trajectories_all_zero():
    t, q, p, _ = _make_traj()
    pair = _pair(q, p, q, p, t)
    assert ate(pair) == 0.0
    assert are(pair) < 1e-12
    assert rte(pair) == 0.0
    assert rre(pair) < 1e-12
    assert td(pair) == 0.0
    assert rd(pair) < 1e-12


def test_constant_offset_exact_values():
    # |offset| = 0.5 -> ATE 0.5 exactly; relative displacements cancel -> RTE 0
    t, q, p, _ = _make_traj()
    offset = np.array([0.3, 0.0, 0.4])
    pair = _pair(q, p + offset, q, p, t)
    assert ate(pair) == pytest.approx(0.5, abs=1e-12)
    assert rte(pair) == pytest.approx(0.0, abs=1e-12)
    assert are(pair) < 1e-12
    assert td(pair) == pytest.approx(0.5 / np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)), abs=1e-12)


def test_constant_rotation_offset():
    # constant rot(z, 10 deg): ARE = 10 deg in rad, RRE = 0
    t, q, p, _ = _make_traj()
    dq = UnitQuaternion.from_axis_angle([0, 0, 1], math.radians(10))
    q_est = np.zeros_like(q)
    for i in range(q.shape[0]):
        q_est[i] = quat_mul(UnitQuaternion.from_array(q[i]), dq).as_array()
    pair = _pair(q_est, p, q, p, t)
    assert are(pair) == pytest.approx(math.radians(10), abs=1e-12)
    assert rre(pair) == pytest.approx(0.0, abs=1e-9)


def test_rigid_offset_invariance_of_relatives():
    # RTE/RRE unchanged when the whole estimate is rigidly offset
    t, q, p, rng = _make_traj(seed=3)
    q_est = np.zeros_like(q)
    p_est = p + rng.normal(scale=0.05, size=p.shape)
    for i in range(q.shape[0]):
        q_est[i] = quat_mul(
            UnitQuaternion.from_array(q[i]),
            UnitQuaternion.from_axis_angle([1, 1, 0], 0.02 * math.sin(i)),
        ).as_array()
    base = _pair(q_est, p_est, q, p, t)
    dq = UnitQuaternion.from_axis_angle([0.2, -0.5, 0.8], 0.7)
    Rm = dq.to_matrix()
    shift = np.array([1.0, -2.0, 0.5])
    p_off = p_est @ Rm.T + shift
    q_off = np.zeros_like(q_est)
    for i in range(q.shape[0]):
        q_off[i] = quat_mul(dq, UnitQuaternion.from_array(q_est[i])).as_array()
    # truth transformed the same way keeps relatives identical
    p_t_off = p @ Rm.T + shift
    q_t_off = np.zeros_like(q)
    for i in range(q.shape[0]):
        q_t_off[i] = quat_mul(dq, UnitQuaternion.from_array(q[i])).as_array()
    moved = _pair(q_off, p_off, q_t_off, p_t_off, t)
    assert rte(moved) == pytest.approx(rte(base), abs=1e-12)
    assert rre(moved) == pytest.approx(rre(base), abs=1e-10)


def test_are_sign_flip_invariance():
    t, q, p, _ = _make_traj()
    pair_a = _pair(q, p, q, p, t)
    pair_b = _pair(-q, p, q, p, t)  # construction canonicalizes -q back
    assert abs(are(pair_a) - are(pair_b)) < 1e-12


def test_zero_length_truth_raises():
    t = np.arange(5) * 0.1
    q = np.tile(UnitQuaternion.identity().as_array(), (5, 1))
    p = np.ones((5, 3))
    with pytest.raises(ZeroLength):
        td(_pair(q, p, q, p, t))
    out = evaluate_pair(_pair(q, p + 0.1, q, p, t))
    assert out["td"] is None
    assert out["ate"] == pytest.approx(0.1 * math.sqrt(3), abs=1e-12)


def test_empty_trajectory_raises():
    t = np.array([0.0])
    q = np.tile(UnitQuaternion.identity().as_array(), (1, 1))
    p = np.zeros((1, 3))
    with pytest.raises(EmptyTrajectory):
        _pair(q, p, q, p, t)


def test_short_run_rte_uses_available_pairs():
    # run shorter than dt window -> EmptyTrajectory; just above -> works
    t = np.array([0.0, 0.01])
    q = np.tile(UnitQuaternion.identity().as_array(), (2, 1))
    p = np.zeros((2, 3))
    with pytest.raises(EmptyTrajectory):
        rte(_pair(q, p, q, p, t), dt=0.05)
    assert rte(_pair(q, p, q, p, t), dt=0.01) == 0.0


def test_align_resamples_truth():
    # truth at 400 Hz, estimate at asynchronous timestamps: linear/slerp interp
    tt = np.arange(0, 41) * 0.0025
    tq = np.zeros((tt.size, 4))
    tp = np.column_stack([tt * 2.0, np.zeros_like(tt), np.zeros_like(tt)])
    for i, ti in enumerate(tt):
        tq[i] = UnitQuaternion.from_axis_angle([0, 0, 1], ti * 1.0).as_array()
    et = np.array([0.01, 0.02, 0.0333, 0.05, 0.08])
    eq = np.zeros((et.size, 4))
    ep = np.column_stack([et * 2.0, np.zeros_like(et), np.zeros_like(et)])
    for i, ti in enumerate(et):
        eq[i] = UnitQuaternion.from_axis_angle([0, 0, 1], ti * 1.0).as_array()
    pair = TrajectoryPair.align(et, eq, ep, tt, tq, tp)
    assert ate(pair) < 1e-12
    assert are(pair) < 1e-9
    with pytest.raises(ValueError):
        TrajectoryPair.align(np.array([-1.0, 0.0]), eq[:2], ep[:2], tt, tq, tp)


def test_afe():
    rng = np.random.default_rng(4)
    f = rng.normal(size=(100, 3))
    assert afe(f, f) == 0.0
    off = np.broadcast_to([0.3, 0.0, 0.4], f.shape)
    assert afe(f, f + off) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(EmptyTrajectory):
        afe(np.zeros((0, 3)), np.zeros((0, 3)))
