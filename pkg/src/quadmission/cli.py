"""Command-line front end: ``quadmission <subcommand> [options]``.

Exit codes: 0 success, 1 configuration error, 2 containment failure in
``compare``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, ScenarioConfig, config_with_overrides, default_config, dump_config, load_config
from .engine import monte_carlo, run_mission
from .export import (FLOAT_FMT, header_lines, write_batch_summary, write_battery, write_event_log,
                     write_frequency_table, write_height, write_trajectory, write_transition_matrix)
from .guidance import per_step_fault_prob
from .mdp.bounds import (QUERIES, ArenaGrid, check_bounds, detection_map, load_scenario,
                         scenario_to_dict, sweep_placements)
from .mdp.prism import MISSION_PROPERTIES, PrismError, export_prism, properties_text
from .mdp.scenario import build_abstract_mdp, scenario_model
from .mdp.solver import check_property

log = logging.getLogger("quadmission")

PF_REL_TOL = 0.10


class CliError(Exception):
    """Bad input detected by the front end (exit code 1)."""


# --------------------------------------------------------------------------- helpers

def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config, args.set) if args.config else \
        config_with_overrides(default_config(), args.set)
    if args.seed is not None:
        cfg = config_with_overrides(cfg, [f"seed={args.seed}"])
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from None
    return out


def _write_effective(cfg: ScenarioConfig, out: Path) -> None:
    text = "".join(f"# {h}\n" for h in header_lines(cfg)) + dump_config(cfg)
    (out / "effective_config.yaml").write_text(text, encoding="utf-8")


def _scenario(args, cfg):
    sc = load_scenario(cfg, args.scenario, args.mdp_set)
    if getattr(args, "objects", None):
        sc = sc.with_objects(_parse_cells(args.objects), sc.detect_probs)
    return sc


def _parse_cells(text: str) -> tuple:
    try:
        cells = tuple(tuple(int(v) for v in part.split(",")) for part in text.split(";"))
    except ValueError:
        raise CliError(f"objects must look like 'x,y;x,y', got {text!r}") from None
    if any(len(c) != 2 for c in cells):
        raise CliError(f"objects must look like 'x,y;x,y', got {text!r}")
    return cells


def _scenario_hash(sc) -> str:
    return hashlib.sha256(json.dumps(scenario_to_dict(sc), sort_keys=True).encode()).hexdigest()[:16]


def _mdp_header(cfg, sc) -> list[str]:
    return header_lines(cfg, scenario_hash=_scenario_hash(sc))


def _write_yaml(path: Path, header, data) -> None:
    text = "".join(f"# {h}\n" for h in header) + yaml.safe_dump(data, sort_keys=False)
    path.write_text(text, encoding="utf-8")


def _num(v: float):
    """Float for YAML output: exact repr, infinities as strings."""
    return float(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")


# --------------------------------------------------------------------------- subcommands

def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _outdir(args)
    rec = run_mission(cfg, args.run)
    write_trajectory(rec, cfg, out / "trajectory.csv")
    write_height(rec, cfg, out / "height.csv")
    write_battery(rec, cfg, out / "battery.csv")
    write_event_log(rec, cfg, out / "events.yaml")
    _write_effective(cfg, out)
    print(f"run {args.run}: {rec.outcome}{' (' + rec.reason + ')' if rec.reason else ''} "
          f"after {rec.duration:.2f} s")
    return 0


def cmd_montecarlo(args) -> int:
    cfg = _config(args)
    if args.runs < 1:
        raise CliError("--runs must be at least 1")
    if args.workers < 1:
        raise CliError("--workers must be at least 1")
    out = _outdir(args)
    stats = monte_carlo(cfg, args.runs, workers=args.workers)
    write_batch_summary(stats, cfg, out / "summary.yaml")
    write_frequency_table(stats, cfg, out / "frequencies.csv")
    write_transition_matrix(stats, cfg, out / "transitions.csv")
    _write_effective(cfg, out)
    for k, v in stats.summary().items():
        if not isinstance(v, dict):
            print(f"{k}: {v}")
    return 0


def cmd_mdp_build(args) -> int:
    cfg = _config(args)
    sc = _scenario(args, cfg)
    out = _outdir(args)
    mdp = build_abstract_mdp(sc)
    info = {"states": mdp.n_states, "choices": mdp.n_choices, "transitions": mdp.n_transitions,
            "deadlocks": len(mdp.deadlocks), "variables": list(mdp.variables),
            "scenario": scenario_to_dict(sc)}
    _write_yaml(out / "mdp.yaml", _mdp_header(cfg, sc), info)
    src = mdp.choice_state()
    rows = []
    for c in range(mdp.n_choices):
        for k in range(mdp.choice_ptr[c], mdp.choice_ptr[c + 1]):
            rows.append((src[c], c, mdp.succ[k], mdp.prob[k]))
    with open(out / "mdp_transitions.csv", "w", encoding="utf-8") as fh:
        fh.write("".join(f"# {h}\n" for h in _mdp_header(cfg, sc)))
        fh.write("state,choice,action,successor,probability\n")
        for s, c, t, p in rows:
            fh.write(f"{s},{c},{mdp.actions[c] or ''},{t},{FLOAT_FMT % p}\n")
    print(f"{mdp.n_states} states, {mdp.n_choices} choices, {mdp.n_transitions} transitions")
    return 0


def cmd_mdp_check(args) -> int:
    cfg = _config(args)
    sc = _scenario(args, cfg)
    out = _outdir(args)
    props = args.property or [p for _, group in MISSION_PROPERTIES for p in group]
    if args.sweep:
        grid = ArenaGrid.for_arena(cfg)
        pd = detection_map(cfg, grid) if args.detection else None
        env = sweep_placements(sc, pd)
        data = {q: [_num(v) for v in env.bounds(q)] for q in QUERIES}
        data["placements"] = len(env.placements)
        for q in QUERIES:
            print(f"{q}: [{data[q][0]}, {data[q][1]}]")
    else:
        mdp = build_abstract_mdp(sc)
        data = {}
        for p in props:
            try:
                data[p] = _num(check_property(mdp, p))
            except (ValueError, KeyError) as exc:
                raise CliError(exc.args[0] if exc.args else str(exc)) from None
            print(f"{p} = {data[p]!r}")
    _write_yaml(out / "mdp_results.yaml", _mdp_header(cfg, sc), data)
    return 0


def cmd_export_prism(args) -> int:
    cfg = _config(args)
    sc = _scenario(args, cfg)
    out = _outdir(args)
    head = "".join(f"// {h}\n" for h in _mdp_header(cfg, sc))
    (out / "model.prism").write_text(head + export_prism(scenario_model(sc)), encoding="utf-8")
    (out / "properties.props").write_text(head + properties_text(), encoding="utf-8")
    print(f"wrote {out / 'model.prism'} and {out / 'properties.props'}")
    return 0


def fault_rate_mismatch(cfg: ScenarioConfig, sc) -> list[str]:
    """Warnings for fault rates that differ between the simulator and the model."""
    gp = cfg.guidance
    sim_pf = per_step_fault_prob(gp.actuator_fault_prob, gp.actuator_fault_period, 1.0)
    out = []
    if (sim_pf == 0) != (sc.pf == 0) or \
            (sim_pf > 0 and abs(sc.pf - sim_pf) > PF_REL_TOL * sim_pf):
        out.append(f"actuator fault rate differs: simulator {sim_pf:.6g}/s, model pf {sc.pf:.6g}/s")
    if not math.isclose(gp.system_fault_prob, sc.system_fault_prob, rel_tol=1e-9, abs_tol=1e-15):
        out.append(f"system fault probability differs: simulator {gp.system_fault_prob}, "
                   f"model {sc.system_fault_prob}")
    return out


def cmd_compare(args) -> int:
    cfg = _config(args)
    sc = _scenario(args, cfg)
    if args.runs < 1:
        raise CliError("--runs must be at least 1")
    out = _outdir(args)
    for w in fault_rate_mismatch(cfg, sc):
        log.warning("mismatch: %s", w)
    stats = monte_carlo(cfg, args.runs, workers=args.workers)
    grid = ArenaGrid.for_arena(cfg)
    pd = detection_map(cfg, grid) if args.detection else None
    env = sweep_placements(sc, pd)
    report = check_bounds(env, stats)
    data = {}
    for c in report.checks:
        data[c.quantity] = {"lower": _num(c.lower), "upper": _num(c.upper),
                            "simulated": _num(c.estimate), "sigma": _num(c.sigma),
                            "contained": c.contained, "width_ratio": _num(c.width_ratio),
                            "passed": c.passed}
        print(c.line())
    data["passed"] = report.passed
    _write_yaml(out / "compare.yaml", _mdp_header(cfg, sc) + [f"runs: {args.runs}"], data)
    write_batch_summary(stats, cfg, out / "summary.yaml")
    _write_effective(cfg, out)
    return 0 if report.passed else 2


# --------------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML scenario file (defaults to the built-in scenario)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config entry, e.g. guidance.system_fault_prob=0")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    mdp = argparse.ArgumentParser(add_help=False)
    mdp.add_argument("--scenario", help="YAML file of abstract-scenario entries")
    mdp.add_argument("--mdp-set", action="append", default=[], metavar="KEY=VALUE",
                     help="override an abstract-scenario entry, e.g. pf=0")
    mdp.add_argument("--objects", help="object cells 'x,y;x,y'")

    p = argparse.ArgumentParser(prog="quadmission", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"quadmission {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="one mission with plot data")
    s.add_argument("--run", type=int, default=0, help="run index")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("montecarlo", parents=[common], help="batch statistics")
    s.add_argument("--runs", type=int, default=2000)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_montecarlo)

    s = sub.add_parser("mdp-build", parents=[common, mdp], help="build the abstract MDP")
    s.set_defaults(func=cmd_mdp_build)

    s = sub.add_parser("mdp-check", parents=[common, mdp], help="model-check the abstract MDP")
    s.add_argument("--property", action="append", help="query, e.g. 'Pmax=? [ F \"fault\" ]'")
    s.add_argument("--sweep", action="store_true", help="envelope over all object placements")
    s.add_argument("--detection", action="store_true",
                   help="use detection probabilities from the simulated search sweep")
    s.set_defaults(func=cmd_mdp_check)

    s = sub.add_parser("export-prism", parents=[common, mdp], help="write PRISM model and properties")
    s.set_defaults(func=cmd_export_prism)

    s = sub.add_parser("compare", parents=[common, mdp], help="simulation vs model envelope")
    s.add_argument("--runs", type=int, default=2000)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--no-detection", dest="detection", action="store_false",
                   help="treat every object as detectable")
    s.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, CliError, PrismError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
