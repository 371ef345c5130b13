"""Scenario configuration: defaults, YAML file I/O and dotted overrides."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import yaml

from .control import ControlGains
from .guidance import GuidanceParams
from .perception import CameraParams
from .plant import QuadParams, TargetParams


class ConfigError(ValueError):
    """Invalid configuration file, key or value."""


def _default_targets():
    return [TargetParams(shape="sphere", colour="red"),
            TargetParams(shape="pyramid", colour="blue")]


@dataclass
class ScenarioConfig:
    """Everything needed to run one mission or a batch.

    Poses marked ``random`` are drawn per run from the given ranges.
    """

    quad: QuadParams = field(default_factory=QuadParams)
    targets: list = field(default_factory=_default_targets)
    control: ControlGains = field(default_factory=ControlGains)
    guidance: GuidanceParams = field(default_factory=GuidanceParams)
    camera: CameraParams = field(default_factory=CameraParams)
    arena_x: tuple = (-2.0, 2.0)
    arena_y: tuple = (-3.5, 3.5)
    arena_z: tuple = (-3.0, 0.0)
    dt: float = 0.01
    seed: int = 2016
    start_position: tuple = (-1.8795, -2.5936, -0.2)
    start_yaw: float = 0.9305
    random_start: bool = False
    start_x_range: tuple = (-1.9, 1.9)
    start_y_range: tuple = (-3.4, 3.4)
    drop_site: tuple = (1.3303, -1.3307, 0.0)
    random_drop_site: bool = False
    drop_x_range: tuple = (-1.5, 1.5)
    drop_y_range: tuple = (-3.0, 3.0)
    target_positions: list | None = None   # fixed (x, y, psi) per target, else random
    target_x_range: tuple = (-1.9, 1.9)
    target_y_range: tuple = (-3.4, 3.4)
    reject_targets_in_drop_zone: bool = False
    initial_voltage: float | None = None
    trajectory_rate: float = 10.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not self.targets:
            raise ConfigError("at least one target is required")
        if abs(self.drop_site[2]) > 1e-12:
            raise ConfigError("drop site must lie on the floor (z = 0)")
        if self.target_positions is not None and len(self.target_positions) != len(self.targets):
            raise ConfigError("target_positions must list one pose per target")
        self._check_inside(self.start_position[:2], "start position")
        self._check_inside(self.drop_site[:2], "drop site")

    def _check_inside(self, xy, what):
        if not (self.arena_x[0] <= xy[0] <= self.arena_x[1] and self.arena_y[0] <= xy[1] <= self.arena_y[1]):
            raise ConfigError(f"{what} {tuple(xy)} lies outside the arena")

    @property
    def grasp_height(self) -> float:
        """Quad height that puts the grasper just on top of a resting target."""
        return -(self.quad.grasper_offset[2] + 2.0 * self.targets[0].radius)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and math.isfinite(obj):
        return obj
    return obj


_SECTIONS = {"quad": QuadParams, "control": ControlGains, "guidance": GuidanceParams,
             "camera": CameraParams}

#: table-symbol spellings accepted in addition to the descriptive keys
ALIASES = {
    "m_Q": "quad.mass", "I_x": "quad.inertia_x", "I_y": "quad.inertia_y",
    "I_z": "quad.inertia_z", "K_T": "quad.thrust_gain", "K_Q": "quad.torque_gain",
    "L": "quad.arm_length", "g": "quad.gravity", "k_Q": "quad.floor_stiffness",
    "c_Q": "quad.floor_damping", "R_Q": "quad.radius", "r_GQ": "quad.grasper_offset",
    "r_CQ": "quad.camera_offset", "tau_g": "quad.gimbal_tau", "V_max": "quad.max_voltage",
    "v_c": "quad.charge_rate", "v_d": "quad.discharge_rate",
    "f": "camera.focal_length", "A": "camera.aspect", "lambda": "camera.half_fov",
    "R_c": "camera.detect_radius", "R_ds": "camera.drop_radius",
    "K_pr": "control.position_gain", "K_dr": "control.velocity_gain",
    "K_pv": "control.visual_gain", "K_iv": "control.visual_integral_gain",
    "N": "control.filter_bandwidth", "v_max": "control.max_speed", "a_max": "control.max_tilt",
    "z_hvr": "guidance.hover_height", "z_srch": "guidance.search_height",
    "z_trnsprt": "guidance.transport_height", "V_th": "guidance.low_voltage",
    "T_max": "guidance.mission_time_limit", "P_a": "guidance.actuator_fault_prob",
    "T_a": "guidance.actuator_fault_period", "P_g": "guidance.grasper_fault_prob",
    "T_g": "guidance.grasper_fault_period", "P_s": "guidance.system_fault_prob",
}


def from_dict(data: dict) -> ScenarioConfig:
    """Build a config from nested plain data, rejecting unknown keys."""
    data = copy.deepcopy(data or {})
    kwargs = {}
    top = {f.name for f in dataclasses.fields(ScenarioConfig)}
    try:
        for key, value in data.items():
            if key not in top:
                raise ConfigError(f"unknown key '{key}'")
            if key in _SECTIONS:
                cls = _SECTIONS[key]
                names = {f.name for f in dataclasses.fields(cls)}
                bad = set(value or {}) - names
                if bad:
                    raise ConfigError(f"unknown key(s) in [{key}]: {sorted(bad)}")
                kwargs[key] = cls(**_tuplify(value or {}))
            elif key == "targets":
                names = {f.name for f in dataclasses.fields(TargetParams)}
                targets = []
                for i, t in enumerate(value):
                    bad = set(t) - names
                    if bad:
                        raise ConfigError(f"unknown key(s) in targets[{i}]: {sorted(bad)}")
                    targets.append(TargetParams(**t))
                kwargs[key] = targets
            elif isinstance(value, list) and key != "target_positions":
                kwargs[key] = tuple(value)
            else:
                kwargs[key] = value
        return ScenarioConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _tuplify(d: dict) -> dict:
    return {k: (tuple(v) if isinstance(v, list) and k != "waypoints" else v) for k, v in d.items()}


def load_config(path, overrides=()) -> ScenarioConfig:
    """Read a YAML scenario file and apply ``key=value`` overrides."""
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
    return from_dict(apply_overrides(data, overrides))


def apply_overrides(data: dict, overrides) -> dict:
    """Return a copy of ``data`` with dotted ``section.key=value`` overrides applied."""
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not key=value")
        key, raw = item.split("=", 1)
        key = ALIASES.get(key.strip(), key.strip())
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"cannot parse value in override '{item}'") from None
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if part.isdigit() and isinstance(node, list):
                node = node[int(part)]
                continue
            node = node.setdefault(part, {})
            if not isinstance(node, (dict, list)):
                raise ConfigError(f"override '{item}' descends into a scalar")
        last = parts[-1]
        if isinstance(node, list) and last.isdigit():
            node[int(last)] = value
        else:
            node[last] = value
    return data


def default_config(**changes) -> ScenarioConfig:
    return dataclasses.replace(ScenarioConfig(), **changes)


def dump_config(cfg: ScenarioConfig) -> str:
    """YAML text that :func:`load_config` maps back to an equal config."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def config_with_overrides(cfg: ScenarioConfig, overrides) -> ScenarioConfig:
    return from_dict(apply_overrides(cfg.to_dict(), overrides))
