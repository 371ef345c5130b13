"""Mission logic: the 17-mode state machine, search waypoints, fault sampling
and the battery monitor."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .plant import step_hazard


class Mode(IntEnum):
    IDLE = 1
    TAKE_OFF = 2
    INITIALISE = 3
    SEARCH = 4
    IDENTIFY = 5
    HOVER_ABOVE = 6
    DESCEND_TO_GRASP = 7
    GRASP = 8
    ASCEND = 9
    TRANSPORT = 10
    DESCEND_TO_DROP = 11
    DROP = 12
    RETURN_TO_SEARCH = 13
    RETURN_TO_BASE = 14
    LAND = 15
    REACQUIRE_TARGET = 16
    EMERGENCY_LAND = 17

    @property
    def label(self) -> str:
        """Human-readable name, e.g. ``"Descend to grasp"``."""
        return self.name.replace("_", " ").capitalize()


M = Mode
SOLID_EDGES = frozenset({
    (M.IDLE, M.TAKE_OFF), (M.TAKE_OFF, M.INITIALISE),
    (M.INITIALISE, M.LAND), (M.INITIALISE, M.SEARCH),
    (M.SEARCH, M.IDENTIFY), (M.SEARCH, M.RETURN_TO_BASE),
    (M.IDENTIFY, M.HOVER_ABOVE),
    (M.HOVER_ABOVE, M.DESCEND_TO_GRASP), (M.HOVER_ABOVE, M.SEARCH),
    (M.DESCEND_TO_GRASP, M.GRASP), (M.DESCEND_TO_GRASP, M.SEARCH),
    (M.GRASP, M.ASCEND),
    (M.ASCEND, M.TRANSPORT), (M.ASCEND, M.REACQUIRE_TARGET),
    (M.TRANSPORT, M.DESCEND_TO_DROP), (M.TRANSPORT, M.REACQUIRE_TARGET),
    (M.DESCEND_TO_DROP, M.DROP), (M.DESCEND_TO_DROP, M.SEARCH),
    (M.DROP, M.RETURN_TO_SEARCH), (M.DROP, M.RETURN_TO_BASE),
    (M.RETURN_TO_SEARCH, M.SEARCH),
    (M.RETURN_TO_BASE, M.LAND), (M.LAND, M.IDLE),
    (M.REACQUIRE_TARGET, M.HOVER_ABOVE), (M.REACQUIRE_TARGET, M.SEARCH),
    (M.EMERGENCY_LAND, M.IDLE),
})
#: modes that divert to an emergency landing when a rotor fails
ACTUATOR_FAULT_MODES = frozenset(Mode(i) for i in range(2, 17))
#: modes that return to base when the battery runs low
LOW_BATTERY_MODES = frozenset(Mode(i) for i in list(range(2, 14)) + [16])
LEGAL_EDGES = SOLID_EDGES | {(m, M.EMERGENCY_LAND) for m in ACTUATOR_FAULT_MODES} \
    | {(m, M.RETURN_TO_BASE) for m in LOW_BATTERY_MODES}
#: modes in which the camera tracker is consulted
TRACKING_MODES = frozenset({M.SEARCH, M.HOVER_ABOVE, M.DESCEND_TO_GRASP, M.REACQUIRE_TARGET})
TETHERED_MODES = frozenset({M.ASCEND, M.TRANSPORT, M.DESCEND_TO_DROP})


class IllegalTransition(AssertionError):
    pass


def _default_waypoints():
    rows = []
    for i, x in enumerate((-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5)):
        ys = (-3.0, 3.0) if i % 2 == 0 else (3.0, -3.0)
        psi = math.pi / 2 if i % 2 == 0 else -math.pi / 2
        rows += [(x, ys[0], -2.0, psi), (x, ys[1], -2.0, psi)]
    return rows


def waypoints() -> list[tuple[float, float, float, float]]:
    """The 14 lawnmower search waypoints ``(x, y, z, psi)``."""
    return _default_waypoints()


@dataclass
class GuidanceParams:
    hover_height: float = -1.0        # z_hvr
    search_height: float = -2.0       # z_srch
    transport_height: float = -1.0    # z_trnsprt
    low_voltage: float = 10.5         # V_th
    mission_time_limit: float = 600.0  # T_max
    position_tol: float = 0.01
    land_position_tol: float = 0.05
    land_speed_tol: float = 0.02
    hover_speed_tol: float = 0.005
    grasp_tol: float = 0.02
    descend_timeout: float = 15.0
    waypoints: list = field(default_factory=_default_waypoints)
    actuator_fault_prob: float = 0.01  # P_a
    actuator_fault_period: float = 60.0  # T_a
    grasper_fault_prob: float = 0.05  # P_g
    grasper_fault_period: float = 60.0  # T_g
    system_fault_prob: float = 0.05   # P_s

    def __post_init__(self):
        self.waypoints = [tuple(float(c) for c in w) for w in self.waypoints]
        for name in ("actuator_fault_prob", "grasper_fault_prob", "system_fault_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.actuator_fault_period <= 0 or self.grasper_fault_period <= 0:
            raise ValueError("fault periods must be positive")
        for name in ("hover_height", "search_height", "transport_height"):
            if getattr(self, name) >= 0:
                raise ValueError(f"{name} must be negative (above the floor)")
        if not self.waypoints:
            raise ValueError("at least one waypoint is required")


def per_step_fault_prob(probability: float, period: float, dt: float) -> float:
    """Probability of an event in one step given its probability over ``period``."""
    return step_hazard(probability, period, dt)


def battery_monitor(voltage: float, mode: Mode, params: GuidanceParams) -> bool:
    """True when the low-battery return must be triggered."""
    return voltage <= params.low_voltage and mode in LOW_BATTERY_MODES


class FaultSampler:
    """Draws actuator, grasper and system faults from independent streams.

    Per-step Bernoulli trials with a constant hazard are sampled through their
    geometric waiting times, which has the same distribution and needs one
    draw per event instead of one per step.
    """

    def __init__(self, params: GuidanceParams, dt: float, rng_actuator, rng_grasper, rng_system):
        self.p_act = per_step_fault_prob(params.actuator_fault_prob, params.actuator_fault_period, dt)
        self.p_grasp = per_step_fault_prob(params.grasper_fault_prob, params.grasper_fault_period, dt)
        self.p_sys = params.system_fault_prob
        self.rng_act = rng_actuator
        self.rng_grasp = rng_grasper
        self.rng_sys = rng_system
        self.act_left = self._wait(self.rng_act, self.p_act)
        self.grasp_left = self._wait(self.rng_grasp, self.p_grasp)
        self.actuator_failed = False

    @staticmethod
    def _wait(rng, p):
        if p <= 0.0:
            return -1
        return int(rng.geometric(p))

    def actuator(self, mode: Mode) -> int:
        """Failed rotor index (0-3) on the step a fault occurs, else -1."""
        if self.actuator_failed or self.act_left < 0 or mode in (M.IDLE, M.EMERGENCY_LAND):
            return -1
        self.act_left -= 1
        if self.act_left > 0:
            return -1
        self.actuator_failed = True
        return int(self.rng_act.integers(4))

    def grasper(self) -> bool:
        """True on the steps a grasper fault occurs."""
        if self.grasp_left < 0:
            return False
        self.grasp_left -= 1
        if self.grasp_left > 0:
            return False
        self.grasp_left = self._wait(self.rng_grasp, self.p_grasp)
        return True

    def system(self) -> bool:
        return bool(self.rng_sys.random() < self.p_sys)


@dataclass
class MissionFlags:
    mission_failed: bool = False
    failure_reason: str = ""
    targets_deposited: int = 0
    waypoint_count: int = 0       # waypoints reached in order (c_wp)
    entry_position: np.ndarray | None = None
    low_battery: bool = False
    system_fault: bool = False
    emergency: bool = False
    tethered: int = -1            # index of the carried target
    mode_entry_time: float = 0.0
    held_yaw: float = 0.0
    revisit: bool = False
    waypoint_target: int = 0


@dataclass(slots=True)
class Snapshot:
    """What the mission logic sees at one step."""

    t: float
    r: np.ndarray
    v: np.ndarray
    psi: float
    voltage: float
    detected: bool = False
    centroid: tuple | None = None
    grasp_distance: float = math.inf
    grasp_index: int = -1


@dataclass
class Commands:
    """Controller inputs selected by the current mode."""

    kind: int = 0                 # 0 motors off, 1 normal, 2 emergency
    r_d: np.ndarray = field(default_factory=lambda: np.zeros(3))
    psi_d: float = 0.0
    max_speed: float = 5.0
    visual: bool = False
    hold_horizontal: bool = False


@dataclass(slots=True)
class Events:
    actuator: int = -1
    grasper: bool = False


class MissionLogic:
    """Finite-state machine selecting the active mode and its commands.

    The logic is deterministic given the snapshot, the detection result and
    the sampled fault events. Side effects on the world (tethering, release)
    are reported through ``actions`` for the engine to apply.
    """

    def __init__(self, params: GuidanceParams, n_targets: int, home, drop_site,
                 quad_radius: float, grasp_height: float, search_speed: float,
                 max_speed: float, max_voltage: float, faults: FaultSampler | None = None):
        self.p = params
        self.n_targets = n_targets
        self.home = np.asarray(home, dtype=float)
        self.drop_site = np.asarray(drop_site, dtype=float)
        self.quad_radius = quad_radius
        self.grasp_height = grasp_height
        self.search_speed = search_speed
        self.max_speed = max_speed
        self.max_voltage = max_voltage
        self.faults = faults
        self.mode = M.IDLE
        self.flags = MissionFlags()
        self.log: list[tuple[float, int, int, str]] = []
        self.actions: list[tuple[str, int]] = []
        self.finished = False
        self.wps = np.asarray(params.waypoints, dtype=float)
        self._cmd = None
        self._cmd_mode = None

    # -- helpers -----------------------------------------------------------
    def _go(self, new: Mode, snap: Snapshot, why: str):
        if (self.mode, new) not in LEGAL_EDGES:
            raise IllegalTransition(f"{self.mode.name} -> {new.name}")
        self.log.append((snap.t, int(self.mode), int(new), why))
        self.mode = new
        self.flags.mode_entry_time = snap.t
        self.flags.held_yaw = snap.psi
        if new == M.INITIALISE:
            self.flags.system_fault = self.faults.system() if self.faults else False
        if new == M.SEARCH:
            f = self.flags
            f.revisit = f.waypoint_count > 0
            f.waypoint_target = f.waypoint_count - 1 if f.revisit else 0

    def _near(self, r, target, tol):
        d0 = r[0] - target[0]
        d1 = r[1] - target[1]
        d2 = r[2] - target[2]
        return d0 * d0 + d1 * d1 + d2 * d2 < tol * tol

    def all_deposited(self) -> bool:
        return self.flags.targets_deposited >= self.n_targets

    def _release(self, why):
        if self.flags.tethered >= 0:
            self.actions.append((why, self.flags.tethered))
            self.flags.tethered = -1

    # -- main step -----------------------------------------------------------
    def step(self, snap: Snapshot, ev: Events) -> Commands:
        """Advance the state machine by one step and return the commands."""
        self.actions = []
        p, f, mode = self.p, self.flags, self.mode
        r = snap.r
        if ev.actuator >= 0 and mode in ACTUATOR_FAULT_MODES:
            f.emergency = True
            self._release("release")
            self._go(M.EMERGENCY_LAND, snap, "actuator fault")
        elif snap.voltage <= p.low_voltage and mode in LOW_BATTERY_MODES:
            f.low_battery = True
            self._release("release_low_battery")
            self._go(M.RETURN_TO_BASE, snap, "low battery")
        else:
            self._transition(snap, ev)
        # commands only change with the mode; in modes that hold the current
        # spot the horizontal set-point is frozen at mode entry
        if self.mode != self._cmd_mode:
            self._cmd = self._commands(snap)
            self._cmd_mode = self.mode
        return self._cmd

    def _transition(self, snap: Snapshot, ev: Events):
        p, f, mode = self.p, self.flags, self.mode
        r = snap.r
        t_in = snap.t - f.mode_entry_time
        if mode == M.IDLE:
            if self.finished:
                return
            if f.emergency or f.mission_failed or self.all_deposited() \
                    or snap.t >= p.mission_time_limit:
                self.finished = True
                return
            if snap.voltage >= self.max_voltage:
                f.low_battery = False
                self._go(M.TAKE_OFF, snap, "charged")
        elif mode == M.TAKE_OFF:
            if self._near(r, (self.home[0], self.home[1], p.hover_height), p.position_tol):
                self._go(M.INITIALISE, snap, "airborne")
        elif mode == M.INITIALISE:
            if f.system_fault:
                self._go(M.LAND, snap, "system fault")
            else:
                self._go(M.SEARCH, snap, "systems ok")
        elif mode == M.SEARCH:
            if self.all_deposited():
                self._go(M.RETURN_TO_BASE, snap, "all targets deposited")
            elif snap.t >= p.mission_time_limit:
                f.mission_failed = True
                f.failure_reason = "time limit"
                self._go(M.RETURN_TO_BASE, snap, "time limit")
            elif snap.detected:
                f.entry_position = np.array(r, dtype=float)
                self._go(M.IDENTIFY, snap, "target found")
            else:
                wp = self.wps[f.waypoint_target]
                if self._near(r, wp[:3], p.position_tol):
                    if f.revisit:
                        f.revisit = False
                        f.waypoint_target = f.waypoint_count
                    else:
                        f.waypoint_count += 1
                        f.waypoint_target = f.waypoint_count
                    self._cmd_mode = None
                    if f.waypoint_count >= len(self.wps):
                        f.mission_failed = True
                        f.failure_reason = "end of path"
                        self._go(M.RETURN_TO_BASE, snap, "end of path")
        elif mode == M.IDENTIFY:
            if self._near(r, f.entry_position, p.position_tol):
                self._go(M.HOVER_ABOVE, snap, "at entry point")
        elif mode == M.HOVER_ABOVE:
            if snap.centroid is None:
                self._go(M.SEARCH, snap, "target lost")
            elif math.hypot(snap.v[0], snap.v[1]) < p.hover_speed_tol:
                self._go(M.DESCEND_TO_GRASP, snap, "steady above target")
        elif mode == M.DESCEND_TO_GRASP:
            if snap.grasp_distance < p.grasp_tol:
                f.tethered = snap.grasp_index
                self.actions.append(("tether", snap.grasp_index))
                self._go(M.GRASP, snap, "in reach")
            elif t_in > p.descend_timeout:
                self._go(M.SEARCH, snap, "too long")
        elif mode == M.GRASP:
            self._go(M.ASCEND, snap, "grasped")
        elif mode == M.ASCEND:
            if ev.grasper:
                f.entry_position = np.array(r, dtype=float)
                self._release("release")
                self._go(M.REACQUIRE_TARGET, snap, "grasper fault")
            elif abs(r[2] - p.transport_height) < p.position_tol:
                self._go(M.TRANSPORT, snap, "at transport height")
        elif mode == M.TRANSPORT:
            if ev.grasper:
                f.entry_position = np.array(r, dtype=float)
                self._release("release")
                self._go(M.REACQUIRE_TARGET, snap, "grasper fault")
            elif self._near(r, self._drop_hover(p.transport_height), p.position_tol):
                self._go(M.DESCEND_TO_DROP, snap, "above drop site")
        elif mode == M.DESCEND_TO_DROP:
            if ev.grasper:
                self._release("release")
                f.targets_deposited += 1
                self._go(M.SEARCH, snap, "dropped early")
            elif self._near(r, self._drop_hover(self.grasp_height), p.position_tol):
                self._go(M.DROP, snap, "at drop height")
        elif mode == M.DROP:
            self._release("release")
            f.targets_deposited += 1
            if self.all_deposited():
                self._go(M.RETURN_TO_BASE, snap, "all targets deposited")
            else:
                self._go(M.RETURN_TO_SEARCH, snap, "targets remain")
        elif mode == M.RETURN_TO_SEARCH:
            if self._near(r, self._drop_hover(p.search_height), p.position_tol):
                self._go(M.SEARCH, snap, "at search height")
        elif mode == M.RETURN_TO_BASE:
            if self._near(r, (self.home[0], self.home[1], p.hover_height), p.position_tol):
                self._go(M.LAND, snap, "over base")
        elif mode == M.LAND:
            if self._near(r, (self.home[0], self.home[1], -self.quad_radius), p.land_position_tol) \
                    and _norm3(snap.v) < p.land_speed_tol:
                self._go(M.IDLE, snap, "landed")
        elif mode == M.REACQUIRE_TARGET:
            if self._near(r, f.entry_position, p.land_position_tol) and _norm3(snap.v) < p.land_speed_tol:
                if snap.detected:
                    self._go(M.HOVER_ABOVE, snap, "target reacquired")
                else:
                    self._go(M.SEARCH, snap, "target not in view")
        elif mode == M.EMERGENCY_LAND:
            if abs(r[2] + self.quad_radius) < p.position_tol:
                self._go(M.IDLE, snap, "emergency landed")

    def _drop_hover(self, z):
        return (self.drop_site[0], self.drop_site[1], z)

    def _commands(self, snap: Snapshot) -> Commands:
        p, f, mode = self.p, self.flags, self.mode
        c = Commands(kind=1, psi_d=f.held_yaw, max_speed=self.max_speed)
        h = self.home
        if mode == M.IDLE:
            c.kind = 0
            c.r_d = np.array([snap.r[0], snap.r[1], snap.r[2]])
        elif mode in (M.TAKE_OFF, M.INITIALISE, M.RETURN_TO_BASE):
            c.r_d = np.array([h[0], h[1], p.hover_height])
        elif mode == M.SEARCH:
            wp = self.wps[f.waypoint_target]
            c.r_d = wp[:3].copy()
            c.psi_d = float(wp[3])
            c.max_speed = self.search_speed
        elif mode in (M.IDENTIFY, M.REACQUIRE_TARGET):
            c.r_d = np.array(f.entry_position, dtype=float)
        elif mode == M.HOVER_ABOVE:
            c.r_d = np.array([snap.r[0], snap.r[1], p.search_height])
            c.visual = True
        elif mode == M.DESCEND_TO_GRASP:
            c.r_d = np.array([snap.r[0], snap.r[1], self.grasp_height])
            c.visual = True
        elif mode == M.GRASP:
            c.r_d = np.array([snap.r[0], snap.r[1], self.grasp_height])
            c.hold_horizontal = True
        elif mode == M.ASCEND:
            c.r_d = np.array([snap.r[0], snap.r[1], p.transport_height])
            c.hold_horizontal = True
        elif mode == M.TRANSPORT:
            c.r_d = np.array(self._drop_hover(p.transport_height))
        elif mode in (M.DESCEND_TO_DROP, M.DROP):
            c.r_d = np.array(self._drop_hover(self.grasp_height))
        elif mode == M.RETURN_TO_SEARCH:
            c.r_d = np.array(self._drop_hover(p.search_height))
        elif mode == M.LAND:
            c.r_d = np.array([h[0], h[1], -self.quad_radius])
        elif mode == M.EMERGENCY_LAND:
            c.kind = 2
            c.r_d = np.array([snap.r[0], snap.r[1], -self.quad_radius])
        return c


def _norm3(v) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def check_transition_log(log) -> list:
    """Entries of a transition log that are not edges of the state machine."""
    return [e for e in log if (Mode(e[1]), Mode(e[2])) not in LEGAL_EDGES]
