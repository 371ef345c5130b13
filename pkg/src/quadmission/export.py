"""Writers for mission records and batch statistics.

Every file starts with a ``#`` header block giving the tool version, the
config hash and the master seed. CSV numbers are written with 17
significant digits so they read back bit-identical.
"""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .config import ScenarioConfig
from .engine import N_MODES, BatchStats, MissionRecord
from .guidance import Mode

FLOAT_FMT = "%.17g"


def header_lines(cfg: ScenarioConfig, **extra) -> list[str]:
    lines = [f"quadmission {__version__}", f"config_hash: {cfg.digest()}", f"seed: {cfg.seed}"]
    lines += [f"{k}: {v}" for k, v in extra.items()]
    return lines


def _header_text(lines) -> str:
    return "".join(f"# {line}\n" for line in lines)


def _csv(path, header, columns, rows) -> Path:
    path = Path(path)
    buf = io.StringIO()
    buf.write(_header_text(header))
    buf.write(",".join(columns) + "\n")
    if len(rows):
        np.savetxt(buf, np.asarray(rows, dtype=float), fmt=FLOAT_FMT, delimiter=",")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _yaml(path, header, data) -> Path:
    path = Path(path)
    text = _header_text(header) + yaml.safe_dump(data, sort_keys=False)
    path.write_text(text, encoding="utf-8")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Column names and data of a file written by this module."""
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    cols = lines[0].strip().split(",")
    if len(lines) == 1:
        return cols, np.zeros((0, len(cols)))
    data = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
    return cols, data


def write_trajectory(rec: MissionRecord, cfg: ScenarioConfig, path) -> Path:
    return _csv(path, header_lines(cfg, run_index=rec.run_index), rec.trajectory_columns,
                rec.trajectory)


def write_height(rec: MissionRecord, cfg: ScenarioConfig, path) -> Path:
    """Height above the floor and the commanded height (z axis points down)."""
    cols = list(rec.trajectory_columns)
    tr = rec.trajectory
    rows = np.column_stack([tr[:, cols.index("t")], -tr[:, cols.index("z")],
                            -tr[:, cols.index("z_cmd")]]) if len(tr) else []
    return _csv(path, header_lines(cfg, run_index=rec.run_index),
                ("t", "height", "height_cmd"), rows)


def write_battery(rec: MissionRecord, cfg: ScenarioConfig, path) -> Path:
    cols = list(rec.trajectory_columns)
    tr = rec.trajectory
    n = len(tr)
    rows = np.column_stack([tr[:, cols.index("t")], tr[:, cols.index("voltage")],
                            np.full(n, cfg.guidance.low_voltage),
                            np.full(n, cfg.quad.max_voltage)]) if n else []
    return _csv(path, header_lines(cfg, run_index=rec.run_index),
                ("t", "voltage", "low_voltage", "max_voltage"), rows)


def event_log(rec: MissionRecord) -> dict:
    return dict(
        run_index=rec.run_index,
        outcome=rec.outcome,
        reason=rec.reason,
        duration=rec.duration,
        targets_deposited=rec.targets_deposited,
        initial=rec.initial,
        transitions=[dict(t=float(t), source=Mode(a).label, target=Mode(b).label, cause=why)
                     for t, a, b, why in rec.transitions],
        faults=[dict(t=float(t), kind=kind, rotor=int(rotor), consequential=bool(cons))
                for t, kind, rotor, cons in rec.faults],
    )


def write_event_log(rec: MissionRecord, cfg: ScenarioConfig, path) -> Path:
    data = event_log(rec)
    data["initial"] = _plain(data["initial"])
    return _yaml(path, header_lines(cfg, run_index=rec.run_index), data)


def write_batch_summary(stats: BatchStats, cfg: ScenarioConfig, path) -> Path:
    return _yaml(path, header_lines(cfg, runs=stats.runs), stats.summary())


def frequency_table(stats: BatchStats) -> list[tuple[str, float]]:
    """Rows of the fault-frequency table."""
    return [("mission success", stats.success_rate),
            ("system fault in Initialise", stats.system_fault_freq),
            ("actuator fault", stats.actuator_fault_freq),
            ("target dropped by grasper fault", stats.grasper_drop_freq)]


def write_frequency_table(stats: BatchStats, cfg: ScenarioConfig, path) -> Path:
    path = Path(path)
    body = "quantity,frequency\n" + "".join(f"{name},{FLOAT_FMT % v}\n"
                                            for name, v in frequency_table(stats))
    path.write_text(_header_text(header_lines(cfg, runs=stats.runs)) + body, encoding="utf-8")
    return path


def write_transition_matrix(stats: BatchStats, cfg: ScenarioConfig, path) -> Path:
    """17 x 17 CSV; row is the source mode, column the destination."""
    path = Path(path)
    p = stats.transition_matrix()
    names = [Mode(i + 1).label for i in range(N_MODES)]
    buf = io.StringIO()
    buf.write(_header_text(header_lines(cfg, runs=stats.runs)))
    buf.write("from/to," + ",".join(names) + "\n")
    for i, name in enumerate(names):
        buf.write(name + "," + ",".join(FLOAT_FMT % v for v in p[i]) + "\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj
