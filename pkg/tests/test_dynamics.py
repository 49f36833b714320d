import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from dido.dynamics import (
    GRAVITY_W,
    DynParams,
    ResidualForce,
    RotorSpeeds,
    accel_world,
    body_force,
    imu_accel_predict,
)
from dido.geom import UnitQuaternion


def test_param_validation():
    with pytest.raises(ValueError):
        DynParams(mass=0.0)
    with pytest.raises(ValueError):
        DynParams(tau=-1.0)
    with pytest.raises(ValueError):
        DynParams(d=[-0.1, 0, 0])
    with pytest.raises(ValueError):
        RotorSpeeds([0.1, 0.1, 0.1, -0.1])
    with pytest.raises(ValueError):
        ResidualForce(sigma2_f=[0.0, 1.0, 1.0])


def test_body_force_no_actuation():
    p = DynParams()
    f = body_force(p, RotorSpeeds(np.zeros(4)), np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(f, np.zeros(3), atol=1e-15)


def test_body_force_hover_balance():
    # tau = 1.1, u_i = sqrt(9.8 / (4 * 1.1)) gives tau * U_ss = 9.8 N for m = 1
    p = DynParams(mass=1.0, tau=1.1)
    u = RotorSpeeds(np.full(4, math.sqrt(9.8 / (4 * 1.1))))
    f = body_force(p, u, np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(f, [0.0, 0.0, 9.8], atol=1e-12)
    # helper agrees
    np.testing.assert_allclose(RotorSpeeds.hover(p).u, u.u, atol=1e-15)


def test_body_force_drag_hand_value():
    # U_s = 2, d_x = 0.1, v_x = 1 -> drag force -0.2 N on x
    p = DynParams(d=[0.1, 0.1, 0.0])
    u = RotorSpeeds(np.full(4, 0.5))
    f = body_force(p, u, [1.0, 0.0, 0.0], np.zeros(3))
    assert f[0] == pytest.approx(-0.2, abs=1e-12)
    assert f[1] == 0.0


def test_body_force_linearity():
    # superposition in f_res and in the drag coefficients
    rng = np.random.default_rng(11)
    for _ in range(50):
        u = RotorSpeeds(rng.uniform(0, 1, size=4))
        v = rng.normal(size=3)
        f1, f2 = rng.normal(size=3), rng.normal(size=3)
        d1, d2 = rng.uniform(0, 1, size=3), rng.uniform(0, 1, size=3)
        pa = DynParams(d=d1)
        pb = DynParams(d=d2)
        pab = DynParams(d=d1 + d2)
        lhs = body_force(pab, u, v, f1 + f2)
        rhs = (
            body_force(pa, u, v, f1)
            + body_force(pb, u, v, f2)
            - body_force(DynParams(d=np.zeros(3)), u, v, np.zeros(3))
        )
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_accel_world_hover_and_free_fall():
    p = DynParams(mass=1.0, tau=1.1)
    hover = RotorSpeeds.hover(p)
    a = accel_world(p, UnitQuaternion.identity(), hover, np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(a, np.zeros(3), atol=1e-12)
    a = accel_world(p, UnitQuaternion.identity(), RotorSpeeds(np.zeros(4)), np.zeros(3), np.zeros(3))
    np.testing.assert_allclose(a, [0.0, 0.0, -9.8], atol=1e-12)


def test_accel_world_tilted_hover_thrust():
    # 30 deg tilt about x: lateral acceleration from the rotated thrust vector,
    # checked against a scipy rotation of the thrust
    p = DynParams(mass=1.0, tau=1.1)
    hover = RotorSpeeds.hover(p)
    q = UnitQuaternion.from_axis_angle([1, 0, 0], math.radians(30))
    a = accel_world(p, q, hover, np.zeros(3), np.zeros(3))
    thrust_w = Rotation.from_euler("x", 30, degrees=True).apply([0, 0, 9.8])
    np.testing.assert_allclose(a, thrust_w + GRAVITY_W, atol=1e-12)


def test_accel_world_identity_equals_body_force():
    rng = np.random.default_rng(12)
    for _ in range(20):
        p = DynParams(mass=rng.uniform(0.5, 2.0), tau=rng.uniform(0.5, 2.0), d=rng.uniform(0, 1, 3))
        u = RotorSpeeds(rng.uniform(0, 1, 4))
        v = rng.normal(size=3)
        fr = rng.normal(size=3)
        a = accel_world(p, UnitQuaternion.identity(), u, v, fr)
        np.testing.assert_allclose(a, body_force(p, u, v, fr) / p.mass + GRAVITY_W, atol=1e-15)


def test_imu_accel_zero_lever_arm():
    rng = np.random.default_rng(13)
    for _ in range(1000):
        p = DynParams(mass=rng.uniform(0.5, 2.0), tau=rng.uniform(0.5, 2.0), d=rng.uniform(0, 1, 3))
        u = RotorSpeeds(rng.uniform(0, 1, 4))
        q = UnitQuaternion(*rng.normal(size=4))
        v = rng.normal(size=3)
        fr = rng.normal(size=3)
        omega = rng.normal(size=3)
        alpha = rng.normal(size=3)
        a = imu_accel_predict(p, q, u, v, fr, omega, alpha)
        v_B = q.conj().to_matrix() @ v
        expected = body_force(p, u, v_B, fr) / p.mass
        np.testing.assert_allclose(a, expected, atol=1e-12)


def test_imu_accel_centripetal_term():
    # omega = [0,0,2], t_IB = [0.1,0,0]: omega x (omega x t) = [-0.4,0,0],
    # entering with a minus sign -> +[0.4,0,0]
    p = DynParams(t_IB=[0.1, 0.0, 0.0])
    a = imu_accel_predict(
        p, UnitQuaternion.identity(), RotorSpeeds(np.zeros(4)), np.zeros(3), np.zeros(3),
        [0.0, 0.0, 2.0], np.zeros(3),
    )
    np.testing.assert_allclose(a, [0.4, 0.0, 0.0], atol=1e-12)


def test_imu_accel_static_hover_reads_g():
    p = DynParams(mass=1.0, tau=1.1)
    a = imu_accel_predict(
        p, UnitQuaternion.identity(), RotorSpeeds.hover(p), np.zeros(3), np.zeros(3),
        np.zeros(3), np.zeros(3),
    )
    np.testing.assert_allclose(a, [0.0, 0.0, 9.8], atol=1e-12)
