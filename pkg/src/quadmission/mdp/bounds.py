"""Linking the simulator to the abstract model: grid mapping, detection
coverage, the placement sweep and the containment check."""
from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import yaml
from numba import njit

from ..config import ConfigError, ScenarioConfig, apply_overrides
from ..engine import BatchStats, _rgb, run_mission
from ..guidance import Mode
from ..perception import band_mask, detect_kernel, target_vertices_world
from ..spatial import SHAPES
from .scenario import AbstractScenario, ScenarioError, build_abstract_mdp
from .solver import check_property

# reference envelopes, used only as the yardstick for interval widths
REFERENCE_BOUNDS = {"success": (0.661, 0.891), "fault": (0.018, 0.041), "time": (101.3, 223.7)}
WIDTH_FACTOR = 2.0

QUERIES = {
    "success": ('Pmin=? [ F "MissionSuccessful" ]', 'Pmax=? [ F "MissionSuccessful" ]'),
    "fault": ('Pmin=? [ F "fault" ]', 'Pmax=? [ F "fault" ]'),
    "time": ('R{"time"}min=? [ F "done" ]', 'R{"time"}max=? [ F "done" ]'),
}


@dataclass(frozen=True)
class ArenaGrid:
    """Square cells over the arena floor.

    Abstract rows run along the search lanes (world y); ``posx`` counts
    cells along world y and ``posy`` counts rows across world x.
    """

    x0: float = -2.0        # world x of the first row's edge
    y0: float = -3.5        # world y of the first column's edge
    cell: float = 1.0
    x_cells: int = 7        # abstract posx extent (along world y)
    y_cells: int = 4        # abstract posy extent (across world x)

    @classmethod
    def for_arena(cls, cfg: ScenarioConfig, cell: float = 1.0) -> "ArenaGrid":
        nx = int(round((cfg.arena_y[1] - cfg.arena_y[0]) / cell))
        ny = int(round((cfg.arena_x[1] - cfg.arena_x[0]) / cell))
        return cls(cfg.arena_x[0], cfg.arena_y[0], cell, nx, ny)

    def cell_of(self, x: float, y: float) -> tuple:
        """Abstract ``(posx, posy)`` of world point ``(x, y)``, clipped to the grid."""
        px = min(max(int(math.floor((y - self.y0) / self.cell)), 0), self.x_cells - 1)
        py = min(max(int(math.floor((x - self.x0) / self.cell)), 0), self.y_cells - 1)
        return (px, py)

    def cell_box(self, posx: int, posy: int) -> tuple:
        """World ``(xlo, xhi, ylo, yhi)`` of a cell."""
        xlo = self.x0 + posy * self.cell
        ylo = self.y0 + posx * self.cell
        return (xlo, xlo + self.cell, ylo, ylo + self.cell)


# --------------------------------------------------------------------------- detection coverage

def search_sweep(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Quad states and gimbal angles at every step of a full fault-free sweep.

    The targets are parked far outside the arena so the search runs to the
    last waypoint.
    """
    g = replace(cfg.guidance, actuator_fault_prob=0.0, grasper_fault_prob=0.0,
                system_fault_prob=0.0)
    far = [(1e3 + 10.0 * i, 1e3, 0.0) for i in range(len(cfg.targets))]
    quiet = replace(cfg, guidance=g, target_positions=far, random_start=False,
                    random_drop_site=False, trajectory_rate=1.0 / cfg.dt)
    rec = run_mission(quiet, 0, record=True)
    cols = {c: i for i, c in enumerate(rec.trajectory_columns)}
    tr = rec.trajectory
    sel = tr[:, cols["mode"]] == Mode.SEARCH
    quad = np.ascontiguousarray(tr[sel, cols["x"]:cols["x"] + 12])
    gimbal = np.ascontiguousarray(tr[sel][:, [cols["gimbal_phi"], cols["gimbal_theta"]]])
    return quad, gimbal


@njit(cache=True)
def _seen(points, masks, quads, gimbals, cam_off, cam, drop_site):
    for k in range(quads.shape[0]):
        found, _, _, _ = detect_kernel(points, masks, quads[k], gimbals[k], cam_off, cam, drop_site)
        if found:
            return True
    return False


def detection_map(cfg: ScenarioConfig, grid: ArenaGrid, samples: int = 32,
                  sweep=None, seed: int | None = None) -> np.ndarray:
    """Probability that the search sweep detects a target placed in each cell.

    Target positions and headings are drawn uniformly within the cell and
    the target sampling ranges; the value is averaged over the configured
    target types. Returns an array indexed ``[posx, posy]``.
    """
    quads, gimbals = search_sweep(cfg) if sweep is None else sweep
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    cam = cfg.camera.packed()
    cam_off = np.asarray(cfg.quad.camera_offset, dtype=float)
    drop = np.asarray(cfg.drop_site, dtype=float)
    shapes = []
    for tp in cfg.targets:
        geo = SHAPES[tp.shape](tp.radius, _rgb(tp.colour))
        shapes.append((np.ascontiguousarray(geo.vertices, dtype=float), band_mask(geo), tp.radius))
    out = np.zeros((grid.x_cells, grid.y_cells))
    for px, py in itertools.product(range(grid.x_cells), range(grid.y_cells)):
        xlo, xhi, ylo, yhi = grid.cell_box(px, py)
        xlo, xhi = max(xlo, cfg.target_x_range[0]), min(xhi, cfg.target_x_range[1])
        ylo, yhi = max(ylo, cfg.target_y_range[0]), min(yhi, cfg.target_y_range[1])
        if xlo >= xhi or ylo >= yhi:
            continue
        hits = 0
        for local, masks, radius in shapes:
            owner = np.zeros(len(local), dtype=np.int64)
            for _ in range(samples):
                tgt = np.zeros((1, 12))
                tgt[0, 0] = rng.uniform(xlo, xhi)
                tgt[0, 1] = rng.uniform(ylo, yhi)
                tgt[0, 2] = -radius
                tgt[0, 8] = rng.uniform(-math.pi, math.pi)
                pts = target_vertices_world(tgt, owner, local)
                hits += _seen(pts, masks, quads, gimbals, cam_off, cam, drop)
        out[px, py] = hits / (samples * len(shapes))
    return out


# --------------------------------------------------------------------------- matched scenario

def matched_scenario(cfg: ScenarioConfig, grid: ArenaGrid | None = None,
                     **changes) -> AbstractScenario:
    """Abstract scenario laid over the simulator's arena.

    Durations are whole-second bounds on the simulator's per-visit mode
    times at the default settings; battery units are seconds of flight
    above the low-voltage threshold.
    """
    grid = grid or ArenaGrid.for_arena(cfg)
    qp, gp = cfg.quad, cfg.guidance
    capacity = int(round((qp.max_voltage - gp.low_voltage) / abs(qp.discharge_rate)))
    ratio = max(1, int(round(qp.charge_rate / abs(qp.discharge_rate))))
    first = gp.waypoints[0]
    params = dict(
        x_cells=grid.x_cells, y_cells=grid.y_cells, objects=((0, 1), (1, 1)),
        base=grid.cell_of(*cfg.start_position[:2]), depot=grid.cell_of(*cfg.drop_site[:2]),
        search_start=grid.cell_of(first[0], first[1]),
        battery_capacity=capacity, battery_low=0, horizon=None,
        pf=0.00018,
        db=1, search_step=2, move_step=1, charge_ratio=ratio,
        system_fault_prob=gp.system_fault_prob, hover_lost_prob=0.0,
        takeoff_time=(3, 4), identify_time=(3, 14), descend_time=(3, 8), grab_time=(0, 1),
        ascend_time=(3, 4), drop_descend_time=(3, 4), release_time=(0, 1), climb_time=(1, 3),
        land_time=(3, 4),
    )
    params.update(changes)
    return AbstractScenario(**params)


# --------------------------------------------------------------------------- sweep

@dataclass
class Envelope:
    """Bounds per placement and their hull."""

    placements: list = field(default_factory=list)
    values: list = field(default_factory=list)     # {quantity: (lo, hi)} per placement

    def add(self, objects, result: dict) -> None:
        self.placements.append(tuple(objects))
        self.values.append(result)

    def bounds(self, quantity: str) -> tuple:
        lo = min(v[quantity][0] for v in self.values)
        hi = max(v[quantity][1] for v in self.values)
        return (lo, hi)


def placement_bounds(sc: AbstractScenario) -> dict:
    """``{quantity: (min, max)}`` for one object placement."""
    mdp = build_abstract_mdp(sc)
    return {q: (check_property(mdp, lo), check_property(mdp, hi)) for q, (lo, hi) in QUERIES.items()}


def sweep_placements(sc: AbstractScenario, pd_map: np.ndarray | None = None,
                     placements=None, progress=None) -> Envelope:
    """Evaluate every placement of the scenario's objects in distinct cells.

    ``pd_map[posx, posy]`` supplies the detection probability of an object
    in that cell (1 everywhere when omitted).
    """
    n = len(sc.objects)
    cells = [(x, y) for y in range(sc.y_cells) for x in range(sc.x_cells)]
    if placements is None:
        placements = list(itertools.combinations(cells, n))
    env = Envelope()
    for k, objs in enumerate(placements):
        probs = None if pd_map is None else tuple(float(pd_map[x, y]) for x, y in objs)
        env.add(objs, placement_bounds(sc.with_objects(objs, probs)))
        if progress is not None:
            progress(k + 1, len(placements))
    return env


# --------------------------------------------------------------------------- containment

@dataclass
class BoundCheck:
    quantity: str
    lower: float
    upper: float
    estimate: float
    sigma: float
    reference: tuple

    @property
    def contained(self) -> bool:
        return self.lower - 3 * self.sigma <= self.estimate <= self.upper + 3 * self.sigma

    @property
    def width(self) -> float:
        return self.upper - self.lower

    @property
    def width_ratio(self) -> float:
        return self.width / (self.reference[1] - self.reference[0])

    @property
    def width_ok(self) -> bool:
        return 1.0 / WIDTH_FACTOR <= self.width_ratio <= WIDTH_FACTOR

    @property
    def passed(self) -> bool:
        return self.contained and self.width_ok

    def line(self) -> str:
        return (f"{self.quantity:8s} [{self.lower:.4g}, {self.upper:.4g}] sim {self.estimate:.4g} "
                f"+/- {3 * self.sigma:.2g} (3 sigma) width x{self.width_ratio:.2f} "
                f"{'PASS' if self.passed else 'FAIL'}")


@dataclass
class BoundsReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, quantity: str) -> BoundCheck:
        for c in self.checks:
            if c.quantity == quantity:
                return c
        raise KeyError(quantity)

    def lines(self) -> list[str]:
        return [c.line() for c in self.checks]


def _binomial_sigma(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def check_bounds(env: Envelope, stats: BatchStats) -> BoundsReport:
    """Do the simulated estimates fall inside the model's envelope?

    Probabilities get a binomial standard error, the mean time the sample
    standard error; containment allows three of either.
    """
    n = stats.runs
    times = np.array([stats.durations[k] for k in sorted(stats.durations)])
    t_sigma = float(times.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    est = {"success": (stats.success_rate, _binomial_sigma(stats.success_rate, n)),
           "fault": (stats.actuator_fault_freq, _binomial_sigma(stats.actuator_fault_freq, n)),
           "time": (stats.mean_time, t_sigma)}
    checks = []
    for q in QUERIES:
        lo, hi = env.bounds(q)
        checks.append(BoundCheck(q, lo, hi, est[q][0], est[q][1], REFERENCE_BOUNDS[q]))
    return BoundsReport(checks)


# --------------------------------------------------------------------------- scenario files

def scenario_to_dict(sc: AbstractScenario) -> dict:
    return {f.name: _plain(getattr(sc, f.name)) for f in dataclasses.fields(sc)}


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _tuples(v):
    if isinstance(v, list):
        return tuple(_tuples(x) for x in v)
    return v


def scenario_from_dict(data: dict, base: AbstractScenario) -> AbstractScenario:
    """``base`` with the entries of ``data`` replaced; lists become tuples."""
    names = {f.name for f in dataclasses.fields(AbstractScenario)}
    bad = set(data) - names
    if bad:
        raise ConfigError(f"unknown scenario key(s): {sorted(bad)}")
    try:
        return replace(base, **{k: _tuples(v) for k, v in data.items()})
    except (TypeError, ValueError, ScenarioError) as exc:
        raise ConfigError(str(exc)) from None


def load_scenario(cfg: ScenarioConfig, path=None, overrides=()) -> AbstractScenario:
    """Matched scenario for ``cfg``, updated from a YAML file and ``key=value`` items."""
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
            raise ConfigError(f"cannot parse {path}{where}: {getattr(exc, 'problem', exc)}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    data = apply_overrides(data, overrides)
    return scenario_from_dict(data, matched_scenario(cfg))
