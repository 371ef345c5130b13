"""Rotor mixing, velocity reconstruction and the cascaded flight controllers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .plant import Q_ARM, Q_G, Q_IX, Q_IY, Q_IZ, Q_KQ, Q_KT, Q_MASS, QuadParams

log = logging.getLogger(__name__)

# pseudo-inputs [collective, roll, pitch, yaw] = MIXING @ rotor inputs
MIXING = np.array([[1.0, 1.0, 1.0, 1.0],
                   [-1.0, 1.0, 0.0, 0.0],
                   [0.0, 0.0, 1.0, -1.0],
                   [-1.0, -1.0, 1.0, 1.0]])
UNMIXING = np.linalg.inv(MIXING)

# indices into the packed gain array
G_KPR, G_KDR, G_KP_RP, G_KP_YAW, G_KD_RP, G_KD_YAW, G_KPV, G_KIV, G_TILT, G_IVLIM = range(10)

# controller kinds understood by the compiled control law
CTRL_OFF, CTRL_NORMAL, CTRL_EMERGENCY = 0, 1, 2


@dataclass
class ControlGains:
    """Gains and limits of the position, attitude and visual loops."""

    position_gain: float = 0.975          # K_pr
    velocity_gain: float = 3.9            # K_dr
    roll_pitch_gain: float = 380.25       # K_p(phi), K_p(theta)
    yaw_gain: float = 0.951               # K_p(psi)
    roll_pitch_damping: float = 39.0      # K_d(phi), K_d(theta)
    yaw_damping: float = 1.95             # K_d(psi)
    visual_gain: float = 0.341            # K_pv
    visual_integral_gain: float = 0.0001  # K_iv
    filter_bandwidth: float = 50.0        # N
    max_speed: float = 5.0
    search_speed: float = 2.0
    max_tilt: float = math.radians(20.0)
    visual_integral_limit: float = 0.5

    def __post_init__(self):
        for name in ("position_gain", "velocity_gain", "roll_pitch_gain", "yaw_gain",
                     "roll_pitch_damping", "yaw_damping", "visual_gain",
                     "visual_integral_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.filter_bandwidth <= 0 or self.max_speed <= 0 or self.search_speed <= 0:
            raise ValueError("bandwidth and speed limits must be positive")
        if not 0 < self.max_tilt < math.pi / 2:
            raise ValueError("max_tilt must lie in (0, pi/2)")

    def packed(self) -> np.ndarray:
        return np.array([self.position_gain, self.velocity_gain, self.roll_pitch_gain,
                         self.yaw_gain, self.roll_pitch_damping, self.yaw_damping,
                         self.visual_gain, self.visual_integral_gain, self.max_tilt,
                         self.visual_integral_limit])


@dataclass(frozen=True)
class PseudoInputs:
    u_col: float
    u_roll: float
    u_pitch: float
    u_yaw: float

    def as_array(self) -> np.ndarray:
        return np.array([self.u_col, self.u_roll, self.u_pitch, self.u_yaw])


def mix(u) -> PseudoInputs:
    """Pseudo-inputs produced by four rotor inputs."""
    return PseudoInputs(*(MIXING @ np.asarray(u, dtype=float)))


def unmix(pseudo) -> np.ndarray:
    """Rotor inputs realising the given pseudo-inputs."""
    if isinstance(pseudo, PseudoInputs):
        pseudo = pseudo.as_array()
    return UNMIXING @ np.asarray(pseudo, dtype=float)


class VelocityFilter:
    """Filtered derivative N s / (s + N) of a sampled position signal.

    Uses the ramp-invariant discretisation, which reproduces the slope of a
    linearly varying position exactly once the transient has decayed.
    """

    def __init__(self, bandwidth: float, dt: float):
        if bandwidth <= 0 or dt <= 0:
            raise ValueError("bandwidth and dt must be positive")
        self.decay = math.exp(-bandwidth * dt)
        self.dt = dt
        self.prev = None
        self.value = np.zeros(3)

    def update(self, position) -> np.ndarray:
        position = np.asarray(position, dtype=float)
        if self.prev is None:
            self.value = np.zeros(3)
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * (position - self.prev) / self.dt
        self.prev = position.copy()
        return self.value


def reconstruct_velocity(positions, dt: float, bandwidth: float) -> np.ndarray:
    """Run the filtered derivative over a position stream; returns the last estimate."""
    filt = VelocityFilter(bandwidth, dt)
    out = np.zeros(3)
    for p in np.atleast_2d(np.asarray(positions, dtype=float)):
        out = filt.update(p)
    return out


# ----------------------------------------------------------------------------
# compiled control law

@njit(cache=True)
def _wrap(a):
    return (a + math.pi) % (2.0 * math.pi) - math.pi


@njit(cache=True)
def _clamp(x, lo, hi):
    return lo if x < lo else (hi if x > hi else x)


@njit(cache=True)
def velocity_command(r_d, r, vmax, kpr, use_override, vx_o, vy_o):
    """Proportional position loop with norm clamp and optional x-y override."""
    vx = kpr * (r_d[0] - r[0])
    vy = kpr * (r_d[1] - r[1])
    vz = kpr * (r_d[2] - r[2])
    if use_override:
        vx = vx_o
        vy = vy_o
    n = math.sqrt(vx * vx + vy * vy + vz * vz)
    if n > vmax:
        s = vmax / n
        vx *= s
        vy *= s
        vz *= s
    return vx, vy, vz


@njit(cache=True)
def attitude_law(acc, eta, omega, psi_d, qp, gains, out):
    """Feedback-linearising collective and attitude law.

    ``out`` receives [u_col, u_roll, u_pitch, u_yaw, phi_d, theta_d, clipped].
    """
    m = qp[Q_MASS]
    kt = qp[Q_KT]
    phi, theta, psi = eta[0], eta[1], eta[2]
    cf = math.cos(phi)
    ct = math.cos(theta)
    ucol = m * (qp[Q_G] - acc[2]) / (kt * cf * ct)
    clipped = 0.0
    tilt = gains[G_TILT]
    cp, sp = math.cos(psi), math.sin(psi)
    if ucol > 1e-12:
        a1 = m * (acc[1] * cp - acc[0] * sp) / (kt * ucol)
        if a1 > 1.0 or a1 < -1.0:
            clipped = 1.0
            a1 = _clamp(a1, -1.0, 1.0)
        phi_d = _clamp(math.asin(a1), -tilt, tilt)
        a2 = m * (acc[0] * cp + acc[1] * sp) / (kt * ucol * cf)
        if a2 > 1.0 or a2 < -1.0:
            clipped = 1.0
            a2 = _clamp(a2, -1.0, 1.0)
        theta_d = _clamp(-math.asin(a2), -tilt, tilt)
    else:
        phi_d = 0.0
        theta_d = 0.0
    wdx = gains[G_KP_RP] * (phi_d - phi) - gains[G_KD_RP] * omega[0]
    wdy = gains[G_KP_RP] * (theta_d - theta) - gains[G_KD_RP] * omega[1]
    wdz = gains[G_KP_YAW] * _wrap(psi_d - psi) - gains[G_KD_YAW] * omega[2]
    arm = qp[Q_ARM]
    out[0] = ucol
    out[1] = qp[Q_IX] / (kt * arm) * wdx
    out[2] = qp[Q_IY] / (kt * arm) * wdy
    out[3] = qp[Q_IZ] / qp[Q_KQ] * wdz
    out[4] = phi_d
    out[5] = theta_d
    out[6] = clipped


@njit(cache=True)
def rotor_inputs(pseudo, u):
    """Invert the mixing matrix and clip to non-negative rotor commands.

    The yaw channel is limited first so that it never pushes a rotor below
    zero; collective and roll/pitch keep priority.
    """
    ucol, ur, up, uy = pseudo[0], pseudo[1], pseudo[2], pseudo[3]
    hi = max(ucol - 2.0 * abs(ur), 0.0)
    lo = -max(ucol - 2.0 * abs(up), 0.0)
    uy = _clamp(uy, lo, hi)
    a = 0.5 * (ucol - uy)
    b = 0.5 * (ucol + uy)
    u[0] = max(0.5 * (a - ur), 0.0)
    u[1] = max(0.5 * (a + ur), 0.0)
    u[2] = max(0.5 * (b + up), 0.0)
    u[3] = max(0.5 * (b - up), 0.0)


@njit(cache=True)
def emergency_rotor_inputs(ucol, failed, u):
    """Two opposing rotors share the collective; the failed pair is shut down."""
    u[0] = 0.0
    u[1] = 0.0
    u[2] = 0.0
    u[3] = 0.0
    if failed == 2 or failed == 3:
        u[0] = 0.5 * ucol
        u[1] = 0.5 * ucol
    else:
        u[2] = 0.5 * ucol
        u[3] = 0.5 * ucol


@njit(cache=True)
def control_law(kind, r, v, eta, omega, r_d, psi_d, vmax, use_override, vx_o, vy_o,
                failed, qp, gains, u, diag):
    """Full controller for one step; writes rotor inputs to ``u``.

    ``diag`` receives [u_col, phi_d, theta_d, vx_d, vy_d, vz_d, clipped].
    """
    for i in range(7):
        diag[i] = 0.0
    if kind == 0:
        for i in range(4):
            u[i] = 0.0
        return
    kpr = gains[G_KPR]
    kdr = gains[G_KDR]
    if kind == 2:
        vz = _clamp(kpr * (r_d[2] - r[2]), -vmax, vmax)
        az = kdr * (vz - v[2])
        tilt = math.cos(eta[0]) * math.cos(eta[1])
        ucol = 0.0
        if tilt > 0.0:
            ucol = max(qp[Q_MASS] * (qp[Q_G] - az) / (qp[Q_KT] * tilt), 0.0)
        emergency_rotor_inputs(ucol, failed, u)
        diag[0] = ucol
        diag[5] = vz
        return
    vx, vy, vz = velocity_command(r_d, r, vmax, kpr, use_override, vx_o, vy_o)
    acc = np.empty(3)
    acc[0] = kdr * (vx - v[0])
    acc[1] = kdr * (vy - v[1])
    acc[2] = kdr * (vz - v[2])
    out = np.empty(7)
    attitude_law(acc, eta, omega, psi_d, qp, gains, out)
    if out[0] < 0.0:
        out[0] = 0.0
    rotor_inputs(out[:4], u)
    diag[0] = out[0]
    diag[1] = out[4]
    diag[2] = out[5]
    diag[3] = vx
    diag[4] = vy
    diag[5] = vz
    diag[6] = out[6]


# ----------------------------------------------------------------------------
# public wrappers

def position_control(r_d, r, rdot, gains: ControlGains, override_velocity=None,
                     max_speed: float | None = None) -> np.ndarray:
    """Desired acceleration from the cascaded position and velocity loops."""
    vmax = gains.max_speed if max_speed is None else max_speed
    use = override_velocity is not None
    vo = (0.0, 0.0) if override_velocity is None else override_velocity
    vx, vy, vz = velocity_command(np.asarray(r_d, float), np.asarray(r, float), vmax,
                                  gains.position_gain, use, float(vo[0]), float(vo[1]))
    return gains.velocity_gain * (np.array([vx, vy, vz]) - np.asarray(rdot, float))


def velocity_setpoint(r_d, r, gains: ControlGains, override_velocity=None,
                      max_speed: float | None = None) -> np.ndarray:
    """Velocity command of the outer position loop (after clamping)."""
    vmax = gains.max_speed if max_speed is None else max_speed
    use = override_velocity is not None
    vo = (0.0, 0.0) if override_velocity is None else override_velocity
    return np.array(velocity_command(np.asarray(r_d, float), np.asarray(r, float), vmax,
                                     gains.position_gain, use, float(vo[0]), float(vo[1])))


def linearizing_feedback(acc_d, eta, psi_d: float, params: QuadParams, gains: ControlGains,
                         omega=(0.0, 0.0, 0.0)) -> tuple[PseudoInputs, float, float]:
    """Pseudo-inputs and roll/pitch commands realising a desired acceleration.

    Returns
    -------
    (PseudoInputs, phi_d, theta_d)
    """
    out = np.empty(7)
    attitude_law(np.asarray(acc_d, float), np.asarray(eta, float), np.asarray(omega, float),
                 float(psi_d), params.packed(), gains.packed(), out)
    if out[6]:
        log.debug("arcsine argument clipped for acc_d=%s", acc_d)
    return PseudoInputs(*out[:4]), float(out[4]), float(out[5])


def emergency_inputs(u_col: float, failed_rotor: int) -> np.ndarray:
    """Rotor inputs of the two-rotor emergency controller (zero-based rotor index)."""
    if failed_rotor not in (0, 1, 2, 3):
        raise ValueError("failed_rotor must be 0..3")
    u = np.zeros(4)
    emergency_rotor_inputs(float(u_col), int(failed_rotor), u)
    return u


class VisualController:
    """PI law that centres the tracked image centroid beneath the camera."""

    def __init__(self, gains: ControlGains, focal_length: float, camera_offset_z: float):
        if focal_length <= 0:
            raise ValueError("focal length must be positive")
        self.gains = gains
        self.focal_length = focal_length
        self.camera_offset_z = camera_offset_z
        self.integral = np.zeros(2)

    def reset(self):
        self.integral = np.zeros(2)

    def error(self, centroid, z_quad: float) -> np.ndarray:
        scale = abs((z_quad - self.camera_offset_z) / self.focal_length)
        return scale * np.array([centroid[1], centroid[0]], dtype=float)

    def command(self, centroid, z_quad: float, psi: float, dt: float) -> np.ndarray:
        """World-frame horizontal velocity command; updates the integrator."""
        e = self.error(centroid, z_quad)
        g = self.gains
        if g.visual_integral_gain > 0:
            self.integral = self.integral + e * dt
            lim = g.visual_integral_limit / g.visual_integral_gain
            n = float(np.hypot(*self.integral))
            if n > lim:
                self.integral *= lim / n
        body = g.visual_gain * e + g.visual_integral_gain * self.integral
        c, s = math.cos(psi), math.sin(psi)
        return np.array([c * body[0] - s * body[1], s * body[0] + c * body[1]])


def visual_control(centroid, z_quad: float, camera_offset_z: float, psi: float,
                   focal_length: float, gains: ControlGains, integral=(0.0, 0.0),
                   dt: float = 0.0) -> np.ndarray:
    """Stateless form of :class:`VisualController` for a single evaluation."""
    vc = VisualController(gains, focal_length, camera_offset_z)
    vc.integral = np.asarray(integral, dtype=float).copy()
    return vc.command(centroid, z_quad, psi, dt)
