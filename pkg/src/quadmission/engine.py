"""Fixed-step mission simulation, Monte Carlo batches and result export."""
from __future__ import annotations

import math
import multiprocessing as mp
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .config import ScenarioConfig
from .control import VisualController, control_law
from .guidance import TRACKING_MODES, Events, FaultSampler, Mode, MissionLogic, Snapshot
from .perception import band_mask, detect_kernel, target_vertices_world
from .plant import Q_GRASP, gimbal_step, grasper_point_state, rk4_step
from .spatial import SHAPES

N_MODES = 17


def integrate_step(y, rates, dt: float):
    """One classical Runge-Kutta step of ``dy/dt = rates(y)``.

    Raises
    ------
    FloatingPointError
        If the new state is not finite.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    y = np.asarray(y, dtype=float)
    k1 = np.asarray(rates(y))
    k2 = np.asarray(rates(y + 0.5 * dt * k1))
    k3 = np.asarray(rates(y + 0.5 * dt * k2))
    k4 = np.asarray(rates(y + dt * k3))
    out = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite state after integration step")
    return out


@dataclass
class MissionRecord:
    """Everything observed during one mission."""

    run_index: int
    seed: int
    initial: dict
    transitions: list
    faults: list
    outcome: str
    reason: str
    duration: float
    targets_deposited: int
    trajectory: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    trajectory_columns: tuple = ()

    @property
    def success(self) -> bool:
        return self.outcome == "success"

    @property
    def modes(self) -> list[int]:
        seq = [int(Mode.IDLE)]
        seq += [to for _, _, to, _ in self.transitions]
        return seq

    def counts(self) -> dict:
        """Per-mission statistics used by :class:`BatchStats`."""
        init = sum(1 for e in self.transitions if e[2] == Mode.INITIALISE)
        sysf = sum(1 for e in self.transitions if e[1] == Mode.INITIALISE and e[2] == Mode.LAND)
        act = any(f[1] == "actuator" for f in self.faults)
        drop = any(f[1] == "grasper" and f[3] for f in self.faults)
        return dict(initialise=init, system_faults=sysf, actuator=act, grasper_drop=drop)


TRAJ_COLUMNS = ("t", "x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r",
                "voltage", "mode", "x_cmd", "y_cmd", "z_cmd", "gimbal_phi", "gimbal_theta")


def _sample_initial(cfg: ScenarioConfig, rng) -> dict:
    """Initial poses, drawn in a fixed order: targets, start, drop site."""
    drop = np.array(cfg.drop_site, dtype=float)
    poses = []
    for i, tp in enumerate(cfg.targets):
        if cfg.target_positions is not None:
            x, y, psi = cfg.target_positions[i]
        else:
            while True:
                x = rng.uniform(*cfg.target_x_range)
                y = rng.uniform(*cfg.target_y_range)
                psi = rng.uniform(-math.pi, math.pi)
                if not cfg.reject_targets_in_drop_zone or cfg.random_drop_site \
                        or math.hypot(x - drop[0], y - drop[1]) >= cfg.camera.drop_radius:
                    break
        poses.append((float(x), float(y), float(psi)))
    if cfg.random_start:
        start = (rng.uniform(*cfg.start_x_range), rng.uniform(*cfg.start_y_range), -cfg.quad.radius)
        yaw = rng.uniform(-math.pi, math.pi)
    else:
        start, yaw = tuple(cfg.start_position), cfg.start_yaw
    if cfg.random_drop_site:
        drop = np.array([rng.uniform(*cfg.drop_x_range), rng.uniform(*cfg.drop_y_range), 0.0])
    return dict(targets=poses, start=tuple(float(c) for c in start), yaw=float(yaw),
                drop_site=tuple(float(c) for c in drop))


def run_seeds(seed: int, run_index: int):
    """Independent generators for pose sampling and the three fault sources."""
    ss = np.random.SeedSequence([int(seed), int(run_index)])
    return [np.random.default_rng(s) for s in ss.spawn(4)]


@njit(cache=True)
def _sense(y, n_t, owner, local, masks, gimbal, cam_off, cam, drop_site):
    tgt = y[12:12 * (n_t + 1)].reshape(n_t, 12)
    pts = target_vertices_world(tgt, owner, local)
    return detect_kernel(pts, masks, y[:12], gimbal, cam_off, cam, drop_site)


@njit(cache=True)
def _grasp_distance(y, grasp_off, tps, skip):
    """Distance from the grasper point to the top of the nearest free target."""
    gpos, _ = grasper_point_state(y[:12], grasp_off)
    best = np.inf
    idx = -1
    for j in range(tps.shape[0]):
        if skip[j]:
            continue
        a = 12 * (j + 1)
        d = math.sqrt((gpos[0] - y[a]) ** 2 + (gpos[1] - y[a + 1]) ** 2
                      + (gpos[2] - (y[a + 2] - tps[j, 1])) ** 2)
        if d < best:
            best = d
            idx = j
    return best, idx


@njit(cache=True)
def _slave_target(y, j, grasp_off, radius):
    pos, vel = grasper_point_state(y[:12], grasp_off)
    a = 12 * (j + 1)
    y[a] = pos[0]
    y[a + 1] = pos[1]
    y[a + 2] = pos[2] + radius
    y[a + 3] = vel[0]
    y[a + 4] = vel[1]
    y[a + 5] = vel[2]


@njit(cache=True)
def _advance(y, vel, kind, r_d, psi_d, vmax, use_ovr, vx_o, vy_o, failed, qp, gains, tps,
             tethered, gimbal, tau_g, decay, dt, u, diag):
    """Control, integrate one step, update gimbal, carried targets and the velocity filter.

    Returns the new state and False if it is not finite.
    """
    control_law(kind, y[0:3], vel, y[6:9], y[9:12], r_d, psi_d, vmax, use_ovr, vx_o, vy_o,
                failed, qp, gains, u, diag)
    y_new = rk4_step(y, u, dt, qp, tps, tethered, failed)
    for i in range(y_new.shape[0]):
        if not math.isfinite(y_new[i]):
            return y_new, False
    gimbal[0], gimbal[1] = gimbal_step(gimbal[0], gimbal[1], y_new[6], y_new[7], tau_g, dt)
    grasp_off = qp[Q_GRASP:Q_GRASP + 3]
    for j in range(tps.shape[0]):
        if tethered[j]:
            _slave_target(y_new, j, grasp_off, tps[j, 1])
    for i in range(3):
        vel[i] = decay * vel[i] + (1.0 - decay) * (y_new[i] - y[i]) / dt
    return y_new, True


def _target_settled(y, j, rest_z) -> bool:
    a = 12 * (j + 1)
    speed = math.sqrt(y[a + 3] ** 2 + y[a + 4] ** 2 + y[a + 5] ** 2)
    return speed < 1e-3 and abs(y[a + 2] - rest_z) < 1e-3


def run_mission(cfg: ScenarioConfig, run_index: int = 0, record: bool = True,
                fault_schedule=None, max_time: float | None = None) -> MissionRecord:
    """Simulate one mission from take-off until it ends in Idle.

    Parameters
    ----------
    cfg : ScenarioConfig
    run_index : int
        Together with ``cfg.seed`` this fixes every random draw of the run.
    record : bool
        Store the decimated trajectory.
    fault_schedule : list of (time, kind, rotor), optional
        Forced fault events (``kind`` is ``"actuator"`` or ``"grasper"``)
        applied in addition to the random ones.
    max_time : float, optional
        Hard stop; defaults to twice the mission time limit.
    """
    rng_pose, rng_act, rng_grasp, rng_sys = run_seeds(cfg.seed, run_index)
    init = _sample_initial(cfg, rng_pose)
    qp_obj, cam, gains, gp = cfg.quad, cfg.camera, cfg.control, cfg.guidance
    dt = cfg.dt
    qp = qp_obj.packed()
    gains_arr = gains.packed()
    cam_arr = cam.packed()
    cam_off = np.asarray(qp_obj.camera_offset, dtype=float)
    grasp_off = np.asarray(qp_obj.grasper_offset, dtype=float)
    n_t = len(cfg.targets)
    tps = np.array([t.packed() for t in cfg.targets])
    tethered = np.zeros(n_t, dtype=np.bool_)
    unavailable = np.zeros(n_t, dtype=np.bool_)   # carried or deposited
    pending = []                                   # released on low battery, not yet at rest
    rest_z = [tp.rest_depth(qp_obj.gravity) for tp in cfg.targets]

    local, owner, masks = [], [], []
    for k, tpar in enumerate(cfg.targets):
        geo = SHAPES[tpar.shape](tpar.radius, _rgb(tpar.colour))
        local.append(geo.vertices)
        owner += [k] * len(geo.vertices)
        masks.append(band_mask(geo))
    local = np.ascontiguousarray(np.vstack(local), dtype=float)
    owner = np.array(owner, dtype=np.int64)
    masks = np.concatenate(masks)

    y = np.zeros(12 * (n_t + 1))
    y[0:3] = init["start"]
    y[8] = init["yaw"]
    for k, (x0, y0, psi0) in enumerate(init["targets"]):
        a = 12 * (k + 1)
        y[a:a + 3] = (x0, y0, -cfg.targets[k].radius)
        y[a + 8] = psi0
    drop_site = np.array(init["drop_site"])
    gimbal = np.zeros(2)
    vmax_batt = qp_obj.max_voltage
    voltage = vmax_batt if cfg.initial_voltage is None else float(cfg.initial_voltage)
    charge = qp_obj.charge_rate * dt
    discharge = qp_obj.discharge_rate * dt

    faults = FaultSampler(gp, dt, rng_act, rng_grasp, rng_sys)
    logic = MissionLogic(gp, n_t, init["start"], drop_site, qp_obj.radius, cfg.grasp_height,
                         gains.search_speed, gains.max_speed, vmax_batt, faults)
    visual = VisualController(gains, cam.focal_length, qp_obj.camera_offset[2])
    schedule = sorted(fault_schedule or [], key=lambda e: e[0])
    fault_log = []
    failed = -1
    u = np.zeros(4)
    diag = np.zeros(7)
    decay = math.exp(-gains.filter_bandwidth * dt)
    vel = np.zeros(3)
    stride = max(1, int(round(1.0 / (cfg.trajectory_rate * dt)))) if record else 0
    rows = []
    t_stop = max_time if max_time is not None else 2.0 * gp.mission_time_limit
    n_steps = int(math.ceil(t_stop / dt))
    outcome, reason = None, ""
    t = 0.0
    snap = Snapshot(0.0, y[0:3], vel, 0.0, voltage)
    ev = Events()

    for k in range(n_steps + 1):
        t = k * dt
        mode = logic.mode
        snap.t = t
        snap.r = y[0:3]
        snap.psi = y[8]
        snap.voltage = voltage
        snap.detected = False
        snap.centroid = None
        snap.grasp_distance = math.inf
        if mode in TRACKING_MODES:
            found, cx, cy, band = _sense(y, n_t, owner, local, masks, gimbal, cam_off,
                                         cam_arr, drop_site)
            snap.detected = bool(found)
            if band >= 0:
                snap.centroid = (cx, cy)
            if mode == Mode.DESCEND_TO_GRASP:
                snap.grasp_distance, snap.grasp_index = _grasp_distance(y, grasp_off, tps,
                                                                        unavailable)
        ev.actuator = faults.actuator(mode)
        ev.grasper = faults.grasper()
        while schedule and schedule[0][0] <= t + 1e-12:
            _, kind, rotor = schedule.pop(0)
            if kind == "actuator":
                if not faults.actuator_failed and mode not in (Mode.IDLE, Mode.EMERGENCY_LAND):
                    faults.actuator_failed = True
                    ev.actuator = int(rotor)
            elif kind == "grasper":
                ev.grasper = True
            else:
                raise ValueError(f"unknown fault kind {kind!r}")
        if ev.actuator >= 0:
            failed = ev.actuator
            fault_log.append((t, "actuator", failed, True))
        if ev.grasper:
            fault_log.append((t, "grasper", -1, bool(tethered.any())))

        cmd = logic.step(snap, ev)
        if logic.finished:
            break
        new_mode = logic.mode
        for action, j in logic.actions:
            if action == "tether":
                tethered[j] = True
                unavailable[j] = True
                a = 12 * (j + 1)
                y[a + 9:a + 12] = y[9:12]
                _slave_target(y, j, qp[Q_GRASP:Q_GRASP + 3], tps[j, 1])
                continue
            tethered[j] = False
            y[12 * (j + 1) + 9:12 * (j + 2)] = 0.0
            if action == "release_low_battery":
                pending.append(j)
            elif not (mode == Mode.DROP or (mode == Mode.DESCEND_TO_DROP
                                             and new_mode == Mode.SEARCH)):
                unavailable[j] = False
        if new_mode != mode and new_mode == Mode.HOVER_ABOVE:
            visual.reset()

        use_ovr = cmd.visual or cmd.hold_horizontal
        vx_o = vy_o = 0.0
        if cmd.visual and snap.centroid is not None:
            vx_o, vy_o = visual.command(snap.centroid, y[2], y[8], dt)
        if record and k % stride == 0:
            rows.append((t, *y[:12], voltage, int(new_mode), *cmd.r_d, gimbal[0], gimbal[1]))
        try:
            y, ok = _advance(y, vel, cmd.kind, cmd.r_d, cmd.psi_d, cmd.max_speed, use_ovr,
                             vx_o, vy_o, failed, qp, gains_arr, tps, tethered, gimbal,
                             qp_obj.gimbal_tau, decay, dt, u, diag)
        except ValueError:
            ok = False
        if not ok:
            # a rotor failure can leave the airframe tumbling into the Euler singularity
            outcome, reason = "failure", ("actuator fault" if failed >= 0 else "numerical")
            break
        if new_mode == Mode.IDLE:
            voltage = min(voltage + charge, vmax_batt)
        else:
            voltage = max(voltage + discharge, 0.0)
        for j in list(pending):
            if _target_settled(y, j, rest_z[j]):
                pending.remove(j)
                a = 12 * (j + 1)
                if math.hypot(y[a] - drop_site[0], y[a + 1] - drop_site[1]) < cam.drop_radius:
                    logic.flags.targets_deposited = min(logic.flags.targets_deposited + 1, n_t)
                else:
                    unavailable[j] = False

    f = logic.flags
    if outcome is None:
        if not logic.finished:
            outcome, reason = "failure", "time limit"
        elif f.emergency:
            outcome, reason = "failure", "actuator fault"
        elif f.mission_failed:
            outcome, reason = "failure", f.failure_reason
        elif logic.all_deposited() and logic.log and logic.log[-1][3] == "landed":
            outcome, reason = "success", ""
        else:
            outcome, reason = "failure", "time limit"
    duration = logic.log[-1][0] if (logic.finished and logic.log) else t
    traj = np.array(rows, dtype=float) if rows else np.zeros((0, len(TRAJ_COLUMNS)))
    return MissionRecord(run_index=run_index, seed=cfg.seed, initial=init,
                         transitions=list(logic.log), faults=fault_log, outcome=outcome,
                         reason=reason, duration=float(duration),
                         targets_deposited=f.targets_deposited, trajectory=traj,
                         trajectory_columns=TRAJ_COLUMNS)


@dataclass
class BatchStats:
    """Aggregate of many missions.

    Every field is a sum or a keyed collection, so :meth:`merge` is
    associative and commutative and the result does not depend on the
    order in which runs finish.
    """

    runs: int = 0
    successes: int = 0
    initialise_entries: int = 0
    system_faults: int = 0
    actuator_faults: int = 0
    grasper_drops: int = 0
    outcomes: Counter = field(default_factory=Counter)
    durations: dict = field(default_factory=dict)
    transition_counts: np.ndarray = field(
        default_factory=lambda: np.zeros((N_MODES, N_MODES), dtype=np.int64))

    def add(self, rec: MissionRecord) -> None:
        if rec.run_index in self.durations:
            raise ValueError(f"run {rec.run_index} already aggregated")
        c = rec.counts()
        self.runs += 1
        self.successes += int(rec.success)
        self.initialise_entries += c["initialise"]
        self.system_faults += c["system_faults"]
        self.actuator_faults += int(c["actuator"])
        self.grasper_drops += int(c["grasper_drop"])
        self.outcomes[rec.reason or rec.outcome] += 1
        self.durations[rec.run_index] = rec.duration
        for _, src, dst, _ in rec.transitions:
            self.transition_counts[src - 1, dst - 1] += 1

    def merge(self, other: "BatchStats") -> "BatchStats":
        overlap = self.durations.keys() & other.durations.keys()
        if overlap:
            raise ValueError(f"runs aggregated twice: {sorted(overlap)[:5]}")
        return BatchStats(
            runs=self.runs + other.runs,
            successes=self.successes + other.successes,
            initialise_entries=self.initialise_entries + other.initialise_entries,
            system_faults=self.system_faults + other.system_faults,
            actuator_faults=self.actuator_faults + other.actuator_faults,
            grasper_drops=self.grasper_drops + other.grasper_drops,
            outcomes=self.outcomes + other.outcomes,
            durations={**self.durations, **other.durations},
            transition_counts=self.transition_counts + other.transition_counts)

    @property
    def success_rate(self) -> float:
        return self.successes / self.runs if self.runs else math.nan

    @property
    def system_fault_freq(self) -> float:
        """Fraction of Initialise visits that found a system fault."""
        return self.system_faults / self.initialise_entries if self.initialise_entries else math.nan

    @property
    def actuator_fault_freq(self) -> float:
        return self.actuator_faults / self.runs if self.runs else math.nan

    @property
    def grasper_drop_freq(self) -> float:
        return self.grasper_drops / self.runs if self.runs else math.nan

    @property
    def mean_time(self) -> float:
        if not self.durations:
            return math.nan
        return math.fsum(self.durations[k] for k in sorted(self.durations)) / self.runs

    def transition_matrix(self) -> np.ndarray:
        """Row-normalised frequencies; row ``i`` is source mode ``i + 1``."""
        out = self.transition_counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.where(out > 0, self.transition_counts / np.maximum(out, 1), 0.0)
        return p

    def edge(self, src: Mode, dst: Mode) -> float:
        return float(self.transition_matrix()[int(src) - 1, int(dst) - 1])

    def summary(self) -> dict:
        return dict(runs=self.runs, success_rate=self.success_rate,
                    system_fault_freq=self.system_fault_freq,
                    actuator_fault_freq=self.actuator_fault_freq,
                    grasper_drop_freq=self.grasper_drop_freq,
                    mean_mission_time=self.mean_time,
                    outcomes=dict(sorted(self.outcomes.items())))


def _run_summary(args):
    cfg, idx = args
    rec = run_mission(cfg, idx, record=False)
    rec.initial = {}
    return rec


def monte_carlo(cfg: ScenarioConfig, runs: int, workers: int = 1, first_run: int = 0,
                callback=None) -> BatchStats:
    """Run ``runs`` missions with indices ``first_run, first_run + 1, ...``.

    Parameters
    ----------
    workers : int
        Size of the process pool; 1 runs in-process. Results are identical
        for any value.
    callback : callable, optional
        Called with each :class:`MissionRecord` as it completes.
    """
    if runs < 1:
        raise ValueError("runs must be at least 1")
    if workers < 1:
        raise ValueError("workers must be at least 1")
    stats = BatchStats()
    jobs = [(cfg, i) for i in range(first_run, first_run + runs)]
    if workers == 1:
        recs = map(_run_summary, jobs)
        pool = None
    else:
        pool = mp.get_context("spawn").Pool(workers)
        recs = pool.imap_unordered(_run_summary, jobs, chunksize=max(1, runs // (8 * workers)))
    try:
        for rec in recs:
            stats.add(rec)
            if callback is not None:
                callback(rec)
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    return stats


_COLOURS = {"red": (1.0, 0.0, 0.0), "green": (0.0, 1.0, 0.0), "blue": (0.0, 0.0, 1.0)}


def _rgb(colour):
    if isinstance(colour, str):
        return _COLOURS[colour]
    return tuple(colour)
