"""The abstract grid-world mission as a four-module guarded-command model.

The arena is a grid of ``x_cells`` by ``y_cells`` cells. The UAV sweeps it
row by row (left to right on even rows, right to left on odd rows), one
cell per search step, starting from the search-start cell. Every abstract
action costs a whole number of seconds; where the concrete duration varies
it is bounded by ``(lower, upper)`` and the model offers both as a
nondeterministic choice. In each flying second the actuator fails with
probability ``pf``.

Modes of the ``uav`` module (``s1``):

==  ============================  ==  ============================
0   set-up (objects placed)       9   descend to drop
1   take-off                      10  drop
2   initialise                    11  climb after drop
3   search                        12  return to base
4   identify / hover above        13  land
5   descend to grasp              14  recharge
6   grasp                         15  return to search
7   ascend                        16  landed, mission over
8   transport                     17  finished (absorbing)
==  ============================  ==  ============================
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

from .explicit import Mdp, build_mdp
from .model import GuardedCommandModel
from .prism import parse_prism


class ScenarioError(ValueError):
    """Invalid abstract scenario."""


def _span(lo: int, hi: int) -> tuple:
    return (int(lo), int(hi))


@dataclass(frozen=True)
class AbstractScenario:
    """Parameters of the abstract mission.

    Durations are in whole seconds; ``(lower, upper)`` pairs become a
    nondeterministic choice between the two.
    """

    x_cells: int = 8
    y_cells: int = 14
    objects: tuple = ((2, 4), (5, 10))
    detect_probs: tuple | None = None      # per object, default 1
    base: tuple = (0, 1)
    depot: tuple = (6, 4)
    search_start: tuple = (0, 0)
    battery_capacity: int = 100            # seconds of flight above the low threshold
    battery_low: int = 0                   # Blow
    horizon: int | None = None             # Miss; None drops the clock
    pf: float = 0.00018
    db: int = 1
    search_step: int = 1                   # dt of one search move
    move_step: int = 1                     # seconds per cell outside search
    charge_ratio: int = 5                  # charge rate / discharge rate
    system_fault_prob: float = 0.05
    hover_lost_prob: float = 0.0
    takeoff_time: tuple = (3, 3)
    identify_time: tuple = (1, 4)
    descend_time: tuple = (3, 8)
    grab_time: tuple = (0, 1)              # Tgl, Tgu
    ascend_time: tuple = (2, 4)
    drop_descend_time: tuple = (2, 4)
    release_time: tuple = (0, 1)
    climb_time: tuple = (1, 3)
    land_time: tuple = (3, 4)

    def __post_init__(self):
        if self.x_cells < 1 or self.y_cells < 1:
            raise ScenarioError("grid must have at least one cell")
        for name in ("base", "depot", "search_start"):
            self._cell(getattr(self, name), name)
        for i, o in enumerate(self.objects):
            self._cell(o, f"object {i + 1}")
        if self.detect_probs is not None:
            if len(self.detect_probs) != len(self.objects):
                raise ScenarioError("detect_probs needs one entry per object")
            if any(not 0.0 <= p <= 1.0 for p in self.detect_probs):
                raise ScenarioError("detection probabilities must lie in [0, 1]")
        if not 0.0 <= self.pf < 1.0:
            raise ScenarioError("pf must lie in [0, 1)")
        for name in ("system_fault_prob", "hover_lost_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ScenarioError(f"{name} must lie in [0, 1]")
        if self.hover_lost_prob >= 1.0:
            raise ScenarioError("hover_lost_prob must be below 1")
        for name in ("takeoff_time", "identify_time", "descend_time", "grab_time",
                     "ascend_time", "drop_descend_time", "release_time", "climb_time",
                     "land_time"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise ScenarioError(f"{name} must satisfy 0 <= lower <= upper")
        if self.search_step < 1 or self.move_step < 1 or self.db < 1 or self.charge_ratio < 1:
            raise ScenarioError("step times, db and charge_ratio must be positive")
        if not 0 <= self.battery_low < self.battery_capacity:
            raise ScenarioError("need 0 <= battery_low < battery_capacity")
        if self.horizon is not None and self.horizon < 1:
            raise ScenarioError("horizon must be positive")

    def _cell(self, c, what):
        x, y = c
        if not (0 <= x < self.x_cells and 0 <= y < self.y_cells):
            raise ScenarioError(f"{what} {tuple(c)} lies outside the {self.x_cells}x{self.y_cells} grid")

    @property
    def last_cell(self) -> tuple:
        """Where the row-by-row sweep ends."""
        y = self.y_cells - 1
        return (self.x_cells - 1 if y % 2 == 0 else 0, y)

    @property
    def probs(self) -> tuple:
        return self.detect_probs if self.detect_probs is not None else (1.0,) * len(self.objects)

    def with_objects(self, objects, detect_probs=None) -> "AbstractScenario":
        return replace(self, objects=tuple(tuple(o) for o in objects), detect_probs=detect_probs)


def search_path(sc: AbstractScenario) -> list[tuple]:
    """Cells in the order the sweep visits them, from ``search_start``."""
    cells = []
    for y in range(sc.y_cells):
        xs = range(sc.x_cells) if y % 2 == 0 else range(sc.x_cells - 1, -1, -1)
        cells += [(x, y) for x in xs]
    k = cells.index(tuple(sc.search_start))
    return cells[k:]


# --------------------------------------------------------------------------- text

RANGED = ("takeoff", "ident", "desc", "grab", "asc", "ddrop", "rel", "climb", "land")
MOVES = ("srch", "tport", "rtb", "rts")


def _durations(sc: AbstractScenario) -> dict:
    """Seconds taken by each labelled action; ranged actions get a ``_max`` twin."""
    spans = {"takeoff": sc.takeoff_time, "ident": sc.identify_time, "desc": sc.descend_time,
             "grab": sc.grab_time, "asc": sc.ascend_time, "ddrop": sc.drop_descend_time,
             "rel": sc.release_time, "climb": sc.climb_time, "land": sc.land_time}
    out = {"srch": sc.search_step, "tport": sc.move_step, "rtb": sc.move_step,
           "rts": sc.move_step}
    for a, (lo, hi) in spans.items():
        out[a] = lo
        if hi != lo:
            out[a + "_max"] = hi
    return out


def _labels(action: str, durations: dict) -> list:
    return [a for a in (action, action + "_max") if a in durations]


def _emit(lines: list, durations: dict, action: str, body: str) -> None:
    for a in _labels(action, durations):
        lines.append(f"\t[{a}] {body}")


def _time_commands(action: str, dur: int, clock: bool, lines: list, battery_guard=False):
    guard = "c=0" + (" & b>Blow" if battery_guard else "")
    wear = f"&(b'=max(b-db*{dur},0))"
    if clock:
        lines.append(f"\t[{action}] {guard} & t+{dur}<Miss -> pow(1-pf,{dur}):(t'=t+{dur}){wear}"
                     f" + 1-pow(1-pf,{dur}):(c'=1);")
        lines.append(f"\t[{action}] {guard} & t+{dur}>=Miss -> 1:(c'=2);")
    else:
        lines.append(f"\t[{action}] {guard} -> pow(1-pf,{dur}):{wear[1:]} + 1-pow(1-pf,{dur}):(c'=1);")


def _move_commands(action: str, tx: str, ty: str, lines: list):
    lines.append(f"\t[{action}] posx<{tx} -> 1:(posx'=posx+1);")
    lines.append(f"\t[{action}] posx>{tx} -> 1:(posx'=posx-1);")
    lines.append(f"\t[{action}] posx={tx} & posy<{ty} -> 1:(posy'=posy+1);")
    lines.append(f"\t[{action}] posx={tx} & posy>{ty} -> 1:(posy'=posy-1);")


def scenario_text(sc: AbstractScenario) -> str:
    """PRISM text of the abstract model for one object placement.

    Ranged actions appear under two labels, ``a`` taking the lower and
    ``a_max`` the upper duration, so the ``"time"`` reward can charge each
    transition its own elapsed seconds.
    """
    n = len(sc.objects)
    lx, ly = sc.last_cell
    dur = _durations(sc)
    clock = sc.horizon is not None
    L = []
    L.append("// abstract search-and-retrieve mission")
    L.append("mdp")
    L.append("")
    consts = [("int", "Xcoord", sc.x_cells - 1), ("int", "Ycoord", sc.y_cells - 1),
              ("int", "lastX", lx), ("int", "lastY", ly),
              ("int", "startX", sc.search_start[0]), ("int", "startY", sc.search_start[1]),
              ("int", "baseX", sc.base[0]), ("int", "baseY", sc.base[1]),
              ("int", "depotX", sc.depot[0]), ("int", "depotY", sc.depot[1])]
    for i, (ox, oy) in enumerate(sc.objects, 1):
        consts += [("int", f"Objx{i}", ox), ("int", f"Objy{i}", oy)]
    for i, p in enumerate(sc.probs, 1):
        consts.append(("double", f"pd{i}", float(p)))
    consts += [("int", "NObj", n), ("int", "Bcap", sc.battery_capacity),
               ("int", "Blow", sc.battery_low)]
    if clock:
        consts.append(("int", "Miss", sc.horizon))
    consts += [("double", "pf", float(sc.pf)), ("int", "db", sc.db),
               ("int", "dt", sc.search_step), ("int", "Kc", sc.charge_ratio),
               ("double", "Ps", float(sc.system_fault_prob)),
               ("double", "pl", float(sc.hover_lost_prob)),
               ("int", "Tgl", sc.grab_time[0]), ("int", "Tgu", sc.grab_time[1])]
    for kind, name, v in consts:
        L.append(f"const {kind} {name} = {v!r};")
    L.append("")
    at = [f"(posx=Objx{i} & posy=Objy{i} & det{i} & !got{i})" for i in range(1, n + 1)]
    L.append(f"formula FOUND = {' | '.join(at) if at else 'false'};")
    L.append("formula ATLAST = posx=lastX & posy=lastY;")
    L.append("")

    # UAV module
    L.append("// UAV module: mode, last search cell, end-of-path flag")
    L.append("module uav")
    L.append("\ts1 : [0..17] init 0;")
    L.append("\tretx : [0..Xcoord] init startX;")
    L.append("\trety : [0..Ycoord] init startY;")
    L.append("\tover : bool init false;")
    L.append("")
    L.append("\t[setup] s1=0 -> 1:(s1'=1);")
    _emit(L, dur, "takeoff", "s1=1 -> 1:(s1'=2);")
    L.append("\t// a system fault sends the UAV straight back down")
    L.append("\t[] c=0 & s1=2 -> 1-Ps:(s1'=15) + Ps:(s1'=13);")
    L.append("\t// found an object: remember the cell and identify it")
    L.append("\t[srch] s1=3 & FOUND -> 1:(s1'=4)&(retx'=posx)&(rety'=posy);")
    L.append("\t[srch] s1=3 & !ATLAST & !FOUND -> 1:true;")
    L.append("\t// end of the sweep with objects left: the mission has failed")
    L.append("\t[srch] s1=3 & ATLAST & !FOUND -> 1:(s1'=12)&(retx'=posx)&(rety'=posy)&(over'=true);")
    L.append("\t// battery low: go home to recharge, then resume from here")
    L.append("\t[] c=0 & s1=3 & b<=Blow -> 1:(s1'=12)&(retx'=posx)&(rety'=posy);")
    _emit(L, dur, "ident", "s1=4 -> 1-pl:(s1'=5) + pl:(s1'=3);")
    _emit(L, dur, "desc", "s1=5 -> 1:(s1'=6);")
    _emit(L, dur, "grab", "s1=6 -> 1:(s1'=7);")
    _emit(L, dur, "asc", "s1=7 -> 1:(s1'=8);")
    L.append("\t[tport] s1=8 & !(posx=depotX & posy=depotY) -> 1:true;")
    L.append("\t[] c=0 & s1=8 & posx=depotX & posy=depotY -> 1:(s1'=9);")
    _emit(L, dur, "ddrop", "s1=9 -> 1:(s1'=10);")
    _emit(L, dur, "rel", "s1=10 -> 1:(s1'=11);")
    _emit(L, dur, "climb", "s1=11 & NoOfObjs>0 & b>Blow -> 1:(s1'=15);")
    _emit(L, dur, "climb", "s1=11 & (NoOfObjs=0 | b<=Blow) -> 1:(s1'=12);")
    L.append("\t[rtb] s1=12 & !(posx=baseX & posy=baseY) -> 1:true;")
    L.append("\t[] c=0 & s1=12 & posx=baseX & posy=baseY -> 1:(s1'=13);")
    _emit(L, dur, "land", "s1=13 & (over | NoOfObjs=0) -> 1:(s1'=16);")
    _emit(L, dur, "land", "s1=13 & !over & NoOfObjs>0 -> 1:(s1'=14);")
    L.append("\t[charge] s1=14 -> 1:(s1'=1);")
    L.append("\t[rts] s1=15 & !(posx=retx & posy=rety) -> 1:true;")
    L.append("\t[] c=0 & s1=15 & posx=retx & posy=rety -> 1:(s1'=3);")
    L.append("\t[stop] s1<17 & (s1=16 | c>0) -> 1:(s1'=17);")
    L.append("\t[] s1=17 -> 1:true;")
    L.append("endmodule")
    L.append("")

    # time / battery / actuator module
    if clock:
        L.append("// Time/Battery/Actuator module: an action of T seconds survives with")
        L.append("// probability (1-pf)^T, advances the clock and drains T*db units of battery")
    else:
        L.append("// Battery/Actuator module: an action of T seconds survives with")
        L.append("// probability (1-pf)^T and drains T*db units of battery")
    L.append("module tba")
    if clock:
        L.append("\tt : [0..Miss] init 0;")
    L.append("\tb : [0..Bcap] init Bcap;")
    L.append("\tc : [0..2] init 0;" if clock else "\tc : [0..1] init 0;")
    L.append("")
    for a, d in dur.items():
        _time_commands(a, d, clock, L, battery_guard=(a == "srch"))
    L.append("\t// recharging on the ground: no actuator wear")
    if clock:
        L.append("\t[charge] c=0 & t+ceil((Bcap-b)/Kc)<Miss -> 1:(t'=t+ceil((Bcap-b)/Kc))&(b'=Bcap);")
        L.append("\t[charge] c=0 & t+ceil((Bcap-b)/Kc)>=Miss -> 1:(c'=2);")
    else:
        L.append("\t[charge] c=0 -> 1:(b'=Bcap);")
    L.append("endmodule")
    L.append("")

    # movement module
    L.append("// Movement module: row-by-row sweep during search, direct moves otherwise")
    L.append("module movement")
    L.append("\tposx : [0..Xcoord] init baseX;")
    L.append("\tposy : [0..Ycoord] init baseY;")
    L.append("")
    L.append("\t[srch] posx>=0 & posx<Xcoord & posy<=Ycoord & mod(posy,2)=0 & !FOUND & !ATLAST "
             "-> 1:(posx'=posx+1);")
    L.append("\t[srch] posx=Xcoord & mod(posy,2)=0 & posy<Ycoord & !FOUND & !ATLAST "
             "-> 1:(posy'=posy+1);")
    L.append("\t[srch] posx>0 & posx<=Xcoord & posy<=Ycoord & mod(posy,2)=1 & !FOUND & !ATLAST "
             "-> 1:(posx'=posx-1);")
    L.append("\t[srch] posx=0 & mod(posy,2)=1 & posy<Ycoord & !FOUND & !ATLAST "
             "-> 1:(posy'=posy+1);")
    L.append("\t[srch] FOUND -> 1:true;")
    L.append("\t[srch] ATLAST & !FOUND -> 1:true;")
    _move_commands("tport", "depotX", "depotY", L)
    _move_commands("rtb", "baseX", "baseY", L)
    _move_commands("rts", "retx", "rety", L)
    L.append("endmodule")
    L.append("")

    # object module
    L.append("// Object module: which objects the camera can see, which are carried")
    L.append("module objects")
    L.append("\tNoOfObjs : [0..NObj] init NObj;")
    for i in range(1, n + 1):
        L.append(f"\tdet{i} : bool init false;")
        L.append(f"\tgot{i} : bool init false;")
    L.append("")
    branches = []
    for bits in itertools.product((True, False), repeat=n):
        probs = [f"pd{i}" if bit else f"(1-pd{i})" for i, bit in enumerate(bits, 1)]
        sets = "&".join(f"(det{i}'={'true' if bit else 'false'})" for i, bit in enumerate(bits, 1))
        branches.append(f"{'*'.join(probs)}:{sets}")
    L.append("\t// each object is visible to the camera with its cell's detection probability")
    L.append(f"\t[setup] true -> {' + '.join(branches) if n else '1:true'};")
    for i in range(1, n + 1):
        earlier = " & ".join(f"!(posx=Objx{j} & posy=Objy{j} & det{j} & !got{j})"
                             for j in range(1, i))
        cond = f"posx=Objx{i} & posy=Objy{i} & det{i} & !got{i}"
        if earlier:
            cond += " & " + earlier
        _emit(L, dur, "grab", f"{cond} -> 1:(got{i}'=true);")
    L.append("\t// release at the depot: one less object to search for")
    _emit(L, dur, "rel", "s1=10 & NoOfObjs>0 -> 1:(NoOfObjs'=NoOfObjs-1);")
    L.append("endmodule")
    L.append("")
    L.append('rewards "time"')
    for a, d in dur.items():
        L.append(f"\t[{a}] true : {d};")
    L.append("\t[charge] true : ceil((Bcap-b)/Kc);")
    L.append("endrewards")
    L.append("")
    L.append('label "MissionSuccessful" = s1=17 & c=0 & NoOfObjs=0;')
    L.append('label "fault" = c=1;')
    L.append('label "done" = s1=17;')
    return "\n".join(L) + "\n"


def scenario_model(sc: AbstractScenario) -> GuardedCommandModel:
    return parse_prism(scenario_text(sc))


def build_abstract_mdp(sc: AbstractScenario) -> Mdp:
    """Explicit MDP of the abstract mission for one object placement."""
    return build_mdp(scenario_model(sc))
