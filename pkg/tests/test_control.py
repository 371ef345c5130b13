import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadmission.control import (ControlGains, PseudoInputs, VelocityFilter, VisualController,
                                 control_law, emergency_inputs, linearizing_feedback, mix,
                                 position_control, reconstruct_velocity, unmix, velocity_setpoint,
                                 visual_control)
from quadmission.plant import QuadParams, TargetParams, quad_derivatives, rk4_step

G = ControlGains()
P = QuadParams()
P_EXAMPLE = QuadParams(thrust_gain=0.2)
rotor = st.floats(0, 100, allow_nan=False)


def test_mix_examples():
    assert mix([1, 1, 1, 1]) == PseudoInputs(4.0, 0.0, 0.0, 0.0)
    np.testing.assert_allclose(unmix((4, 0, 0, 0)), [1, 1, 1, 1])


@given(st.lists(rotor, min_size=4, max_size=4))
def test_unmix_inverts_mix(u):
    np.testing.assert_allclose(unmix(mix(u)), u, atol=1e-12)


def test_velocity_filter_constant_and_first_sample():
    f = VelocityFilter(50.0, 0.01)
    assert np.array_equal(f.update([1.0, 2.0, 3.0]), np.zeros(3))
    for _ in range(50):
        v = f.update([1.0, 2.0, 3.0])
    assert np.array_equal(v, np.zeros(3))


def test_velocity_filter_tracks_ramp():
    N, dt = 50.0, 0.01
    steps = int(round(5 / N / dt)) + 1
    pos = [(k * dt, 0.0, 0.0) for k in range(steps)]
    np.testing.assert_allclose(reconstruct_velocity(pos, dt, N), (1, 0, 0), rtol=0.02)


def test_velocity_filter_matches_continuous_ramp_response():
    # exact response of N s/(s+N) to a unit ramp: 1 - exp(-N t)
    N, dt = 50.0, 0.001
    f = VelocityFilter(N, dt)
    f.update((0.0, 0.0, 0.0))
    for k in range(1, 41):
        v = f.update((k * dt, 0.0, 0.0))
    assert v[0] == pytest.approx(1 - math.exp(-N * 40 * dt), abs=0.03)


def test_velocity_filter_validation():
    with pytest.raises(ValueError):
        VelocityFilter(0.0, 0.01)


def test_position_control_examples():
    np.testing.assert_array_equal(position_control((1, 2, -1), (1, 2, -1), np.zeros(3), G),
                                  np.zeros(3))
    np.testing.assert_allclose(velocity_setpoint((10, 0, 0), (0, 0, 0), G), (5, 0, 0))
    np.testing.assert_allclose(position_control((0, 0, 0), (0, 0, 0), (1, 0, 0), G), (-3.9, 0, 0))


def test_override_replaces_horizontal_command():
    v = velocity_setpoint((3, 3, -1), (0, 0, -1), G, override_velocity=(0.2, -0.1))
    np.testing.assert_allclose(v, (0.2, -0.1, 0.0))


@given(st.tuples(*[st.floats(-50, 50)] * 3), st.tuples(*[st.floats(-50, 50)] * 3),
       st.floats(0.1, 5))
def test_velocity_command_clamped(r_d, r, vmax):
    assert np.linalg.norm(velocity_setpoint(r_d, r, G, max_speed=vmax)) <= vmax * (1 + 1e-12)


def test_linearizing_feedback_examples():
    pseudo, phi_d, theta_d = linearizing_feedback(np.zeros(3), np.zeros(3), 0.0, P_EXAMPLE, G)
    assert pseudo.u_col == pytest.approx(74.0655, abs=1e-4)
    assert phi_d == 0 and theta_d == 0
    pseudo, _, _ = linearizing_feedback((0, 0, -9.81), np.zeros(3), 0.0, P_EXAMPLE, G)
    assert pseudo.u_col == pytest.approx(148.131, abs=1e-3)
    _, phi_d, theta_d = linearizing_feedback((1e4, 1e4, 0), np.zeros(3), 0.0, P, G)
    assert abs(phi_d) == pytest.approx(math.radians(20))
    assert abs(theta_d) == pytest.approx(math.radians(20))


@settings(max_examples=100)
@given(st.tuples(*[st.floats(-20, 20)] * 3), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3),
       st.floats(-math.pi, math.pi))
def test_attitude_commands_within_tilt(acc, phi, theta, psi):
    _, phi_d, theta_d = linearizing_feedback(acc, (phi, theta, psi), psi, P, G)
    assert abs(phi_d) <= G.max_tilt + 1e-15
    assert abs(theta_d) <= G.max_tilt + 1e-15


@settings(max_examples=100)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-math.pi, math.pi))
def test_feedback_linearisation_reproduces_vertical_acceleration(ax, ay, az, psi):
    acc = np.array([ax, ay, az])
    pseudo, phi_d, theta_d = linearizing_feedback(acc, (0.0, 0.0, psi), psi, P, G)
    state = np.zeros(12)
    state[2] = -2.0
    state[6:9] = (phi_d, theta_d, psi)
    pseudo, _, _ = linearizing_feedback(acc, (phi_d, theta_d, psi), psi, P, G)
    # pure collective: remove attitude pseudo-inputs so only thrust acts
    u = unmix((pseudo.u_col, 0.0, 0.0, 0.0))
    d = quad_derivatives(state, u, P)
    assert d[5] == pytest.approx(az, abs=1e-10)


def test_emergency_inputs_examples():
    np.testing.assert_allclose(emergency_inputs(74.07, 0), (0, 0, 37.035, 37.035))
    np.testing.assert_allclose(emergency_inputs(74.07, 1), (0, 0, 37.035, 37.035))
    np.testing.assert_allclose(emergency_inputs(74.07, 2), (37.035, 37.035, 0, 0))
    np.testing.assert_allclose(emergency_inputs(74.07, 3), (37.035, 37.035, 0, 0))
    with pytest.raises(ValueError):
        emergency_inputs(1.0, 4)


@given(st.floats(0, 200), st.integers(0, 3))
def test_emergency_preserves_collective(u_col, k):
    u = emergency_inputs(u_col, k)
    assert u.sum() == pytest.approx(u_col)
    assert u[k] == 0.0


def test_visual_control_examples():
    assert np.array_equal(visual_control((0, 0), -2.0, 0.1, 0.0, 400.0, G), np.zeros(2))
    cmd = visual_control((40, 0), -2.0, 0.1, 0.0, 400.0, G)
    np.testing.assert_allclose(VisualController(G, 400.0, 0.1).error((40, 0), -2.0), (0, 0.21))
    np.testing.assert_allclose(cmd, (0, 0.0716), atol=1e-4)
    rot = visual_control((40, 0), -2.0, 0.1, math.pi / 2, 400.0, G)
    np.testing.assert_allclose(rot, (-cmd[1], cmd[0]), atol=1e-15)


def test_visual_integrator_reset_and_windup():
    vc = VisualController(ControlGains(visual_integral_gain=1.0), 400.0, 0.1)
    for _ in range(1000):
        vc.command((200, 200), -2.0, 0.0, 0.1)
    assert np.hypot(*vc.integral) * 1.0 <= 0.5 + 1e-12
    vc.reset()
    assert np.array_equal(vc.integral, np.zeros(2))


def _fly(r_d, seconds, dt=0.01):
    qp, gp = P.packed(), G.packed()
    tps = np.zeros((0, len(TargetParams().packed())))
    tethered = np.zeros(0, dtype=np.bool_)
    y = np.zeros(12)
    y[2] = -1.0
    u, diag = np.zeros(4), np.zeros(7)
    r_d = np.asarray(r_d, float)
    traj = []
    for k in range(int(round(seconds / dt))):
        control_law(1, y[0:3], y[3:6], y[6:9], y[9:12], r_d, 0.0, G.max_speed, False, 0.0, 0.0,
                    -1, qp, gp, u, diag)
        y = rk4_step(y, u, dt, qp, tps, tethered, -1)
        traj.append(y[:3].copy())
    return np.array(traj)


@pytest.mark.parametrize("axis", [0, 1, 2])
def test_closed_loop_step_settles(axis):
    target = np.array([0.0, 0.0, -1.0])
    target[axis] += 1.0 if axis < 2 else -1.0
    traj = _fly(target, 10.0)
    err = np.abs(traj[:, axis] - target[axis])
    settled = np.nonzero(err > 0.05)[0]
    t_settle = (settled[-1] + 1) * 0.01 if len(settled) else 0.0
    assert t_settle < 10.0
    assert np.abs(traj[-1] - target).max() < 0.05
