import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadmission.plant import (QuadParams, QuadState, TargetParams, TargetState, battery_derivative,
                               battery_step, floor_force_quad, gimbal_derivatives, gimbal_step,
                               grasper_accel, quad_derivatives, rk4_step, target_derivatives)
from quadmission.spatial import SingularAttitudeError

P = QuadParams()
# the worked trim example uses a unit thrust gain of 0.2
P_EXAMPLE = QuadParams(thrust_gain=0.2)


def hover_state(z=-1.0):
    s = np.zeros(12)
    s[2] = z
    return s


# --------------------------------------------------------------------------- floor

@pytest.mark.parametrize("z,zdot,expected", [(-0.3, 0.0, 0.0), (-0.3, 5.0, 0.0), (-0.2, 0.0, 0.0),
                                             (-0.1, 0.0, -377.5)])
def test_floor_force_quad(z, zdot, expected):
    assert floor_force_quad(z, zdot, P) == pytest.approx(expected, abs=1e-9)


def test_floor_force_damping_term():
    assert floor_force_quad(-0.2, 1.0, P) == pytest.approx(-P.floor_damping)


# --------------------------------------------------------------------------- rigid body

def test_hover_trim_example_inputs():
    u_each = P_EXAMPLE.mass * P_EXAMPLE.gravity / P_EXAMPLE.thrust_gain / 4
    assert u_each == pytest.approx(18.5164, abs=1e-4)
    assert 4 * u_each == pytest.approx(74.0655, abs=1e-4)
    d = quad_derivatives(hover_state(), [u_each] * 4, P_EXAMPLE)
    assert np.abs(d).max() < 1e-10


def test_hover_trim_default_gains():
    d = quad_derivatives(hover_state(), [P.hover_input()] * 4, P)
    assert np.linalg.norm(d) < 1e-10


def test_free_fall():
    d = quad_derivatives(hover_state(-1.0), np.zeros(4), P)
    np.testing.assert_allclose(d[3:6], [0, 0, P.gravity])
    np.testing.assert_allclose(d[9:12], 0)


def test_yaw_channel():
    d = quad_derivatives(hover_state(), [0, 0, 1, 1], P)
    assert d[11] == pytest.approx(P.torque_gain * 2 / P.inertia_z)
    assert d[9] == 0 and d[10] == 0


def test_roll_and_pitch_channels():
    d = quad_derivatives(hover_state(), [0, 1, 0, 0], P)
    assert d[9] == pytest.approx(P.arm_length * P.thrust_gain / P.inertia_x)
    d = quad_derivatives(hover_state(), [0, 0, 1, 0], P)
    assert d[10] == pytest.approx(P.arm_length * P.thrust_gain / P.inertia_y)


def test_negative_input_rejected():
    with pytest.raises(ValueError):
        quad_derivatives(hover_state(), [1, 1, 1, -1], P)


def test_gimbal_lock_raises():
    s = hover_state()
    s[7] = math.pi / 2
    with pytest.raises(SingularAttitudeError):
        quad_derivatives(s, np.zeros(4), P)


@settings(max_examples=50)
@given(st.integers(0, 3), st.lists(st.floats(0, 5), min_size=4, max_size=4),
       st.floats(0.1, 5))
def test_failed_rotor_ignores_its_input(k, u, bump):
    s = hover_state()
    s[6:9] = (0.1, -0.05, 0.3)
    s[9:12] = (0.2, -0.1, 0.05)
    u2 = list(u)
    u2[k] += bump
    a = quad_derivatives(s, u, P, failed_rotor=k)
    b = quad_derivatives(s, u2, P, failed_rotor=k)
    np.testing.assert_array_equal(a, b)


def test_quad_state_failed_rotor():
    st_ = QuadState(r=np.array([0, 0, -1.0]), rotor_ok=(True, False, True, True))
    assert st_.failed_rotor == 1
    a = quad_derivatives(st_, [1, 5, 1, 1], P)
    b = quad_derivatives(st_, [1, 0, 1, 1], P)
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        QuadState(rotor_ok=(False, False, True, True)).failed_rotor


# --------------------------------------------------------------------------- grasper

def test_grasper_accel_without_rotation():
    acc = np.array([0.3, -0.2, 1.0])
    np.testing.assert_allclose(grasper_accel(hover_state(), acc, np.zeros(3), P), acc)


def test_grasper_accel_spin_about_offset_axis():
    s = hover_state()
    s[11] = 3.0
    acc = np.array([0.1, 0.2, 0.3])
    np.testing.assert_allclose(grasper_accel(s, acc, np.zeros(3), P), acc, atol=1e-15)


def test_grasper_accel_roll_rate_centripetal():
    w = 2.0
    s = hover_state()
    s[9] = w
    np.testing.assert_allclose(grasper_accel(s, np.zeros(3), np.zeros(3), P),
                               [0, 0, -0.2 * w * w], atol=1e-15)


# --------------------------------------------------------------------------- gimbal

def test_gimbal_equilibrium():
    assert gimbal_derivatives((-0.1, 0.2), (0.1, -0.2, 0.0), 0.005) == (0.0, 0.0)


def test_gimbal_rate_example():
    assert gimbal_derivatives((0.0, 0.0), (0.1, 0.0, 0.0), 0.005)[0] == pytest.approx(-20.0)


def test_gimbal_step_response_time_constant():
    tau, phi = 0.005, 0.1
    g = 0.0
    dt = tau / 100
    for _ in range(100):
        g, _ = gimbal_step(g, 0.0, phi, 0.0, tau, dt)
    analytic = -phi * (1 - math.exp(-1))
    assert g == pytest.approx(analytic, rel=1e-12)
    assert abs(g / -phi - 0.632) < 0.02


def test_gimbal_rejects_nonpositive_tau():
    with pytest.raises(ValueError):
        gimbal_derivatives((0, 0), (0, 0, 0), 0.0)


# --------------------------------------------------------------------------- battery

def test_battery_derivative_cases():
    assert battery_derivative(P.max_voltage, True, P) == 0.0
    assert battery_derivative(10.0, True, P) == pytest.approx(0.025)
    assert battery_derivative(10.0, False, P) == pytest.approx(-0.005)


def test_battery_charges_ten_to_eleven_in_forty_seconds():
    v, dt = 10.0, 0.01
    for _ in range(4000):
        v = battery_step(v, True, P, dt)
    assert v == pytest.approx(11.0, abs=1e-9)
    assert battery_step(v, True, P, dt) == P.max_voltage


@given(st.floats(0, 11), st.lists(st.booleans(), min_size=1, max_size=300), st.floats(0.01, 5))
def test_battery_stays_in_range(v, charging, dt):
    for c in charging:
        v = battery_step(v, c, P, dt)
        assert 0.0 <= v <= P.max_voltage


# --------------------------------------------------------------------------- targets

TP = TargetParams()


def test_target_airborne_falls():
    s = np.zeros(12)
    s[2] = -1.0
    np.testing.assert_allclose(target_derivatives(s, TP)[3:6], [0, 0, 9.81])


def test_target_rest_depth():
    assert TP.rest_depth() == pytest.approx(-0.05 + 0.003924, abs=1e-12)
    s = np.zeros(12)
    s[2] = TP.rest_depth()
    assert np.abs(target_derivatives(s, TP)[3:6]).max() < 1e-12
    s[2] = -TP.radius
    np.testing.assert_allclose(target_derivatives(s, TP)[3:6], [0, 0, 9.81])


def test_tethered_target_copies_feed():
    st_ = TargetState(r=np.array([0, 0, -1.0]), tethered=True)
    d = target_derivatives(st_, TP, quad_feed=(np.zeros(3), np.zeros(3)))
    assert np.all(d[3:6] == 0) and np.all(d[9:12] == 0)
    feed = (np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3]))
    d = target_derivatives(st_, TP, quad_feed=feed)
    np.testing.assert_array_equal(d[3:6], feed[0])
    np.testing.assert_array_equal(d[9:12], feed[1])
    with pytest.raises(ValueError):
        target_derivatives(st_, TP)


def test_dropped_target_settles():
    qp = P.packed()
    tps = TP.packed()[None, :]
    y = np.zeros(24)
    y[2] = -5.0                 # quad far above
    y[12:15] = (0.3, 0.2, -0.6)
    y[15:18] = (0.2, -0.1, 0.0)
    u = np.full(4, P.hover_input())
    tethered = np.zeros(1, dtype=np.bool_)
    for _ in range(500):
        y = rk4_step(y, u, 0.01, qp, tps, tethered, -1)
    assert np.linalg.norm(y[15:18]) < 1e-3
    assert abs(y[14] - TP.rest_depth()) < 1e-3


# --------------------------------------------------------------------------- parameters

def test_param_validation():
    with pytest.raises(ValueError):
        QuadParams(mass=0.0)
    with pytest.raises(ValueError):
        QuadParams(discharge_rate=0.01)
    with pytest.raises(ValueError):
        TargetParams(radius=-1.0)
