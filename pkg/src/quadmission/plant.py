"""Continuous-time dynamics of the quadrotor and of the targets.

State vectors are packed as 12 floats ``[x, y, z, vx, vy, vz, phi, theta, psi,
p, q, r]`` (world-frame position and velocity, Euler angles, body rates).
The kernels are compiled with numba so that the Monte Carlo engine can call
them once per step; thin numpy wrappers give the public interface.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .spatial import GIMBAL_LOCK_MARGIN, SingularAttitudeError, dcm_wb, euler_rates

# indices into the packed quadrotor parameter array
Q_MASS, Q_IX, Q_IY, Q_IZ, Q_KT, Q_KQ, Q_ARM, Q_G, Q_KF, Q_CF, Q_RAD = range(11)
Q_GRASP = 11   # 3 entries
Q_CAM = 14     # 3 entries
N_QPARAM = 17

# indices into a packed target parameter row
T_MASS, T_RAD, T_KF, T_CF = range(4)


@dataclass
class QuadParams:
    """Physical constants of the quadrotor (defaults from the Qball-X4 values).

    ``thrust_gain`` is the force per unit rotor input and ``torque_gain`` the
    reaction torque per unit input.
    """

    mass: float = 1.51
    inertia_x: float = 0.03
    inertia_y: float = 0.03
    inertia_z: float = 0.04
    thrust_gain: float = 120.0
    torque_gain: float = 0.2
    arm_length: float = 0.2
    gravity: float = 9.81
    floor_stiffness: float = 3775.0
    floor_damping: float = 75.5
    radius: float = 0.2
    grasper_offset: tuple = (0.0, 0.0, 0.2)
    camera_offset: tuple = (0.0, 0.0, 0.1)
    gimbal_tau: float = 0.005
    max_voltage: float = 11.0
    charge_rate: float = 0.025
    discharge_rate: float = -0.005

    def __post_init__(self):
        for name in ("mass", "inertia_x", "inertia_y", "inertia_z", "thrust_gain",
                     "torque_gain", "arm_length", "floor_stiffness", "floor_damping",
                     "radius", "gimbal_tau", "max_voltage", "charge_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.discharge_rate < 0:
            raise ValueError("discharge_rate must be negative")

    def packed(self) -> np.ndarray:
        return np.array([self.mass, self.inertia_x, self.inertia_y, self.inertia_z,
                         self.thrust_gain, self.torque_gain, self.arm_length, self.gravity,
                         self.floor_stiffness, self.floor_damping, self.radius,
                         *self.grasper_offset, *self.camera_offset], dtype=float)

    def hover_input(self) -> float:
        """Per-rotor input that balances gravity with a level attitude."""
        return self.mass * self.gravity / (4.0 * self.thrust_gain)


@dataclass
class TargetParams:
    mass: float = 0.4
    radius: float = 0.05
    floor_stiffness: float = 1000.0
    floor_damping: float = 20.0
    shape: str = "sphere"
    colour: str = "red"

    def __post_init__(self):
        for name in ("mass", "radius", "floor_stiffness", "floor_damping"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    def packed(self) -> np.ndarray:
        return np.array([self.mass, self.radius, self.floor_stiffness, self.floor_damping])

    def rest_depth(self, gravity: float = 9.81) -> float:
        """Static floor-balance height of the target centre (world z)."""
        return -self.radius + self.mass * gravity / self.floor_stiffness


@dataclass
class QuadState:
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rdot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    voltage: float = 11.0
    rotor_ok: tuple = (True, True, True, True)
    grasper_engaged: bool = False
    gimbal: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def packed(self) -> np.ndarray:
        return np.concatenate([self.r, self.rdot, self.eta, self.omega]).astype(float)

    @property
    def failed_rotor(self) -> int:
        bad = [i for i, ok in enumerate(self.rotor_ok) if not ok]
        if len(bad) > 1:
            raise ValueError("at most one rotor may fail")
        return bad[0] if bad else -1


@dataclass
class TargetState:
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rdot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    eta: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    tethered: bool = False
    deposited: bool = False

    def packed(self) -> np.ndarray:
        return np.concatenate([self.r, self.rdot, self.eta, self.omega]).astype(float)


# ----------------------------------------------------------------------------
# compiled kernels

@njit(cache=True)
def floor_force(z, zdot, stiffness, damping, radius):
    """Vertical spring-damper floor reaction (negative is upwards)."""
    if z >= -radius:
        return -stiffness * (radius + z) - damping * zdot
    return 0.0


@njit(cache=True)
def _check_pitch(theta):
    if abs(theta) >= math.pi / 2 - GIMBAL_LOCK_MARGIN:
        raise ValueError("pitch too close to +-pi/2")


@njit(cache=True)
def quad_rates(s, u, qp, failed, out):
    """Write the 12 state derivatives of the quadrotor into ``out``."""
    u1, u2, u3, u4 = u[0], u[1], u[2], u[3]
    if failed == 0:
        u1 = 0.0
    elif failed == 1:
        u2 = 0.0
    elif failed == 2:
        u3 = 0.0
    elif failed == 3:
        u4 = 0.0
    m = qp[Q_MASS]
    kt = qp[Q_KT]
    g = qp[Q_G]
    phi, theta, psi = s[6], s[7], s[8]
    p, q, r = s[9], s[10], s[11]
    _check_pitch(theta)
    R = dcm_wb(phi, theta, psi)
    thrust = kt * (u1 + u2 + u3 + u4) / m
    ff = floor_force(s[2], s[5], qp[Q_KF], qp[Q_CF], qp[Q_RAD])
    # body z axis expressed in world is the third row of R
    out[0] = s[3]
    out[1] = s[4]
    out[2] = s[5]
    out[3] = -thrust * R[2, 0]
    out[4] = -thrust * R[2, 1]
    out[5] = g + ff / m - thrust * R[2, 2]
    dphi, dtheta, dpsi = euler_rates(phi, theta, p, q, r)
    out[6] = dphi
    out[7] = dtheta
    out[8] = dpsi
    ix, iy, iz = qp[Q_IX], qp[Q_IY], qp[Q_IZ]
    arm = qp[Q_ARM]
    tx = arm * kt * (u2 - u1)
    ty = arm * kt * (u3 - u4)
    tz = qp[Q_KQ] * (-u1 - u2 + u3 + u4)
    # omega x (I omega)
    gx = q * iz * r - r * iy * q
    gy = r * ix * p - p * iz * r
    gz = p * iy * q - q * ix * p
    out[9] = (tx - gx) / ix
    out[10] = (ty - gy) / iy
    out[11] = (tz - gz) / iz


@njit(cache=True)
def grasper_point_accel(s, ds, offset):
    """World-frame acceleration of a point rigidly offset from the centre of mass."""
    p, q, r = s[9], s[10], s[11]
    pd, qd, rd = ds[9], ds[10], ds[11]
    ox, oy, oz = offset[0], offset[1], offset[2]
    # omega x offset
    cx = q * oz - r * oy
    cy = r * ox - p * oz
    cz = p * oy - q * ox
    # omega x (omega x offset) + omegadot x offset
    bx = q * cz - r * cy + qd * oz - rd * oy
    by = r * cx - p * cz + rd * ox - pd * oz
    bz = p * cy - q * cx + pd * oy - qd * ox
    R = dcm_wb(s[6], s[7], s[8])
    out = np.empty(3)
    for i in range(3):
        out[i] = ds[3 + i] + R[0, i] * bx + R[1, i] * by + R[2, i] * bz
    return out


@njit(cache=True)
def grasper_point_state(s, offset):
    """World position and velocity of the grasper point."""
    R = dcm_wb(s[6], s[7], s[8])
    p, q, r = s[9], s[10], s[11]
    ox, oy, oz = offset[0], offset[1], offset[2]
    wx = q * oz - r * oy
    wy = r * ox - p * oz
    wz = p * oy - q * ox
    pos = np.empty(3)
    vel = np.empty(3)
    for i in range(3):
        pos[i] = s[i] + R[0, i] * ox + R[1, i] * oy + R[2, i] * oz
        vel[i] = s[3 + i] + R[0, i] * wx + R[1, i] * wy + R[2, i] * wz
    return pos, vel


@njit(cache=True)
def target_rates(ts, tp, g, tethered, feed_acc, feed_omegadot, out):
    """Target derivatives: rigidly carried when tethered, otherwise falling/resting."""
    out[0] = ts[3]
    out[1] = ts[4]
    out[2] = ts[5]
    _check_pitch(ts[7])
    dphi, dtheta, dpsi = euler_rates(ts[6], ts[7], ts[9], ts[10], ts[11])
    out[6] = dphi
    out[7] = dtheta
    out[8] = dpsi
    if tethered:
        out[3] = feed_acc[0]
        out[4] = feed_acc[1]
        out[5] = feed_acc[2]
        out[9] = feed_omegadot[0]
        out[10] = feed_omegadot[1]
        out[11] = feed_omegadot[2]
        return
    m = tp[T_MASS]
    fx = 0.0
    fy = 0.0
    fz = 0.0
    if ts[2] >= -tp[T_RAD]:
        c = tp[T_CF]
        fx = -c * ts[3]
        fy = -c * ts[4]
        fz = -tp[T_KF] * (tp[T_RAD] + ts[2]) - c * ts[5]
    out[3] = fx / m
    out[4] = fy / m
    out[5] = g + fz / m
    out[9] = 0.0
    out[10] = 0.0
    out[11] = 0.0


@njit(cache=True)
def _rates_into(y, u, qp, tps, tethered, failed, dy):
    sq = y[:12]
    dq = dy[:12]
    quad_rates(sq, u, qp, failed, dq)
    acc_g = grasper_point_accel(sq, dq, qp[Q_GRASP:Q_GRASP + 3])
    omd = dq[9:12]
    for k in range(tps.shape[0]):
        a = 12 * (k + 1)
        target_rates(y[a:a + 12], tps[k], qp[Q_G], tethered[k], acc_g, omd, dy[a:a + 12])


@njit(cache=True)
def system_rates(y, u, qp, tps, tethered, failed):
    """Derivative of the stacked quad + targets state."""
    dy = np.empty_like(y)
    _rates_into(y, u, qp, tps, tethered, failed, dy)
    return dy


@njit(cache=True)
def rk4_step(y, u, dt, qp, tps, tethered, failed):
    """Classic fourth-order Runge-Kutta step with inputs held constant."""
    n = y.shape[0]
    k = np.empty((4, n))
    tmp = np.empty(n)
    _rates_into(y, u, qp, tps, tethered, failed, k[0])
    for i in range(n):
        tmp[i] = y[i] + 0.5 * dt * k[0, i]
    _rates_into(tmp, u, qp, tps, tethered, failed, k[1])
    for i in range(n):
        tmp[i] = y[i] + 0.5 * dt * k[1, i]
    _rates_into(tmp, u, qp, tps, tethered, failed, k[2])
    for i in range(n):
        tmp[i] = y[i] + dt * k[2, i]
    _rates_into(tmp, u, qp, tps, tethered, failed, k[3])
    out = np.empty(n)
    h = dt / 6.0
    for i in range(n):
        out[i] = y[i] + h * (k[0, i] + 2.0 * k[1, i] + 2.0 * k[2, i] + k[3, i])
    return out


@njit(cache=True)
def gimbal_step(phi_g, theta_g, phi, theta, tau, dt):
    """Exact first-order gimbal update with the airframe attitude held over the step."""
    a = math.exp(-dt / tau)
    return -phi + (phi_g + phi) * a, -theta + (theta_g + theta) * a


# ----------------------------------------------------------------------------
# public wrappers

def floor_force_quad(z: float, zdot: float, p: QuadParams) -> float:
    """Floor reaction on the quadrotor along world z."""
    return float(floor_force(z, zdot, p.floor_stiffness, p.floor_damping, p.radius))


def _unpack_failed(failed) -> int:
    if failed is None:
        return -1
    return int(failed)


def quad_derivatives(state, u, p: QuadParams, failed_rotor: int | None = None) -> np.ndarray:
    """Time derivative of the 12 rigid-body states.

    Parameters
    ----------
    state : QuadState or array_like, shape (12,)
    u : array_like, shape (4,)
        Non-negative rotor inputs.
    p : QuadParams
    failed_rotor : int, optional
        Zero-based index of a rotor producing no thrust or torque.

    Raises
    ------
    SingularAttitudeError
        When the pitch angle is at gimbal lock.
    """
    if isinstance(state, QuadState):
        if failed_rotor is None:
            failed_rotor = state.failed_rotor if state.failed_rotor >= 0 else None
        s = state.packed()
    else:
        s = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("rotor inputs must be non-negative")
    out = np.empty(12)
    try:
        quad_rates(s, u, p.packed(), _unpack_failed(failed_rotor), out)
    except ValueError as exc:
        raise SingularAttitudeError(str(exc)) from None
    return out


def grasper_accel(state, rddot_q, omegadot, p: QuadParams) -> np.ndarray:
    """Acceleration of the grasper point given the body accelerations."""
    s = state.packed() if isinstance(state, QuadState) else np.asarray(state, dtype=float)
    ds = np.zeros(12)
    ds[3:6] = rddot_q
    ds[9:12] = omegadot
    return grasper_point_accel(s, ds, np.asarray(p.grasper_offset, dtype=float))


def gimbal_derivatives(gimbal, eta, tau_g: float) -> tuple[float, float]:
    """Rates of the gimbal roll and pitch angles (first-order lag to -attitude)."""
    if tau_g <= 0:
        raise ValueError("tau_g must be positive")
    return (-(eta[0] + gimbal[0]) / tau_g, -(eta[1] + gimbal[1]) / tau_g)


def battery_derivative(voltage: float, charging: bool, p: QuadParams) -> float:
    """Battery voltage rate: charge at the pad, linear drain in flight."""
    if voltage >= p.max_voltage and charging:
        return 0.0
    if charging:
        return p.charge_rate
    if voltage <= 0.0:
        return 0.0
    return p.discharge_rate


def battery_step(voltage: float, charging: bool, p: QuadParams, dt: float) -> float:
    """Exact update of the piecewise-linear battery model, clipped to [0, max]."""
    v = voltage + battery_derivative(voltage, charging, p) * dt
    return min(max(v, 0.0), p.max_voltage)


def target_derivatives(state, p: TargetParams, quad_feed=None, gravity: float = 9.81) -> np.ndarray:
    """Target derivative; ``quad_feed = (grasper_accel, omegadot)`` when tethered."""
    if isinstance(state, TargetState):
        tethered = state.tethered
        s = state.packed()
    else:
        s = np.asarray(state, dtype=float)
        tethered = quad_feed is not None
    if tethered and quad_feed is None:
        raise ValueError("a tethered target needs the grasper feed")
    acc = np.zeros(3) if quad_feed is None else np.asarray(quad_feed[0], dtype=float)
    omd = np.zeros(3) if quad_feed is None else np.asarray(quad_feed[1], dtype=float)
    out = np.empty(12)
    target_rates(s, p.packed(), gravity, tethered, acc, omd, out)
    return out


def step_hazard(probability: float, period: float, dt: float) -> float:
    """Per-step event probability matching ``probability`` over ``period`` seconds."""
    if not (0.0 <= probability <= 1.0) or period <= 0 or dt <= 0:
        raise ValueError("need 0 <= probability <= 1 and positive period, dt")
    return -math.expm1((dt / period) * math.log1p(-probability)) if probability < 1 else 1.0
