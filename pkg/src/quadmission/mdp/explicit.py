"""Explicit-state MDPs and their construction from guarded-command models."""
from __future__ import annotations

import itertools
import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .expr import (Expr, ExprError, Num, compile_function, fold_constants, runtime_namespace,
                   substitute, to_python)
from .model import GuardedCommandModel, ModelError, expand_formulas

log = logging.getLogger(__name__)

PROB_TOL = 1e-12


@dataclass
class Mdp:
    """Flat explicit MDP.

    The choices of state ``s`` are ``state_ptr[s]:state_ptr[s+1]`` and the
    branches of choice ``c`` are ``choice_ptr[c]:choice_ptr[c+1]`` in
    ``succ``/``prob``. Rewards are per choice and already include any state
    reward of the source state.
    """

    state_ptr: np.ndarray
    choice_ptr: np.ndarray
    succ: np.ndarray
    prob: np.ndarray
    actions: list = field(default_factory=list)
    rewards: dict = field(default_factory=dict)
    labels: dict = field(default_factory=dict)
    variables: tuple = ()
    states: list = field(default_factory=list)
    initial: int = 0
    deadlocks: list = field(default_factory=list)

    def __post_init__(self):
        self.state_ptr = np.asarray(self.state_ptr, dtype=np.int64)
        self.choice_ptr = np.asarray(self.choice_ptr, dtype=np.int64)
        self.succ = np.asarray(self.succ, dtype=np.int64)
        self.prob = np.asarray(self.prob, dtype=float)
        if not self.actions:
            self.actions = [None] * self.n_choices
        self.check()

    @property
    def n_states(self) -> int:
        return len(self.state_ptr) - 1

    @property
    def n_choices(self) -> int:
        return len(self.choice_ptr) - 1

    @property
    def n_transitions(self) -> int:
        return len(self.succ)

    def choice_state(self) -> np.ndarray:
        """Source state of every choice."""
        return np.repeat(np.arange(self.n_states), np.diff(self.state_ptr))

    def check(self) -> None:
        n = self.n_states
        if n < 1:
            raise ModelError("an MDP needs at least one state")
        if np.any(np.diff(self.state_ptr) < 1):
            raise ModelError("every state needs at least one choice")
        if np.any(np.diff(self.choice_ptr) < 1):
            raise ModelError("every choice needs at least one branch")
        if len(self.succ) and (self.succ.min() < 0 or self.succ.max() >= n):
            raise ModelError("successor index out of range")
        if np.any(self.prob < 0):
            raise ModelError("negative transition probability")
        sums = np.add.reduceat(self.prob, self.choice_ptr[:-1])
        bad = np.flatnonzero(np.abs(sums - 1.0) > PROB_TOL)
        if len(bad):
            raise ModelError(f"choice {bad[0]} has probabilities summing to {sums[bad[0]]!r}")
        for name, r in self.rewards.items():
            if len(r) != self.n_choices:
                raise ModelError(f"reward '{name}' must have one entry per choice")
        for name, lab in self.labels.items():
            if len(lab) != n:
                raise ModelError(f"label '{name}' must have one entry per state")

    def label(self, name: str) -> np.ndarray:
        try:
            return self.labels[name]
        except KeyError:
            raise KeyError(f"unknown label '{name}'; known: {sorted(self.labels)}") from None

    def valuation(self, s: int) -> dict:
        return dict(zip(self.variables, self.states[s])) if self.states else {}

    @classmethod
    def from_choices(cls, choices, labels=None, rewards=None, initial=0) -> "Mdp":
        """Build from ``choices[s] = [{succ: prob, ...}, ...]``.

        ``rewards[name][s]`` lists one reward per choice of ``s``.
        """
        state_ptr, choice_ptr, succ, prob = [0], [0], [], []
        for dists in choices:
            for d in dists:
                for t, p in sorted(d.items()):
                    succ.append(t)
                    prob.append(p)
                choice_ptr.append(len(succ))
            state_ptr.append(len(choice_ptr) - 1)
        rew = {k: np.array([x for per in v for x in per], dtype=float)
               for k, v in (rewards or {}).items()}
        labs = {k: np.asarray(v, dtype=bool) for k, v in (labels or {}).items()}
        return cls(state_ptr, choice_ptr, succ, prob, rewards=rew, labels=labs, initial=initial)


# --------------------------------------------------------------------------- builder

@dataclass
class _Compiled:
    module: int
    action: str | None
    updates: list          # [(prob fn, [(slot, value fn)])]


def _prepare(e: Expr, model: GuardedCommandModel, consts: dict) -> Expr:
    e = expand_formulas(e, model.formulas)
    e = substitute(e, {k: Num(v) for k, v in consts.items()})
    return fold_constants(e)


def build_mdp(model: GuardedCommandModel, max_states: int = 5_000_000) -> Mdp:
    """Explore the reachable state space of ``model``.

    Synchronisation follows the usual semantics: a labelled action fires
    only when every module whose alphabet contains it has an enabled
    command for it, and the joint distribution is the product of the
    chosen commands' distributions. States with no enabled command are made
    absorbing with a self-loop and listed in ``deadlocks``.
    """
    consts = model.constant_values()
    variables = model.variables()
    slot = {v.name: i for i, v in enumerate(variables)}
    names = tuple(v.name for v in variables)

    lows, highs, bools = [], [], []
    init = []
    for v in variables:
        if v.is_bool:
            lows.append(0)
            highs.append(1)
            bools.append(True)
            val = _const_value(_prepare(v.init, model, consts), v.name)
            if not isinstance(val, bool):
                raise ModelError(f"initial value of bool '{v.name}' is not a boolean")
        else:
            lo = _const_value(_prepare(v.low, model, consts), v.name)
            hi = _const_value(_prepare(v.high, model, consts), v.name)
            if not (_is_int(lo) and _is_int(hi)) or lo > hi:
                raise ModelError(f"variable '{v.name}' has an invalid range [{lo}..{hi}]")
            lows.append(lo)
            highs.append(hi)
            bools.append(False)
            val = _const_value(_prepare(v.init, model, consts), v.name)
            if not _is_int(val) or not lo <= val <= hi:
                raise ModelError(f"initial value {val} of '{v.name}' outside [{lo}..{hi}]")
        init.append(val)

    def fn(e):
        try:
            return compile_function(to_python(_prepare(e, model, consts), slot))
        except ExprError as exc:
            raise ModelError(str(exc)) from None

    guard_fns, commands = [], []
    for mi, m in enumerate(model.modules):
        body = ["def g(s):", "    out = []"]
        cmds = []
        for cmd in m.commands:
            try:
                src = to_python(_prepare(cmd.guard, model, consts), slot)
            except ExprError as exc:
                raise ModelError(f"module {m.name}: {exc}") from None
            body.append(f"    if {src}: out.append({len(cmds)})")
            ups = [(fn(u.prob), [(slot[n], fn(e)) for n, e in u.assignments]) for u in cmd.updates]
            cmds.append(_Compiled(mi, cmd.action, ups))
        body.append("    return out")
        ns = runtime_namespace()
        exec("\n".join(body), ns)
        guard_fns.append(ns["g"])
        commands.append(cmds)

    action_modules = {}
    action_order = []
    for mi, m in enumerate(model.modules):
        for cmd in m.commands:
            if cmd.action and cmd.action not in action_modules:
                action_order.append(cmd.action)
                action_modules[cmd.action] = []
            if cmd.action and mi not in action_modules[cmd.action]:
                action_modules[cmd.action].append(mi)

    reward_items = []
    for r in model.rewards:
        items = [(it.action, it.state, fn(it.guard), fn(it.reward)) for it in r.items]
        reward_items.append((r.name, items))
    label_fns = {name: fn(e) for name, e in model.labels.items()}

    def distribution(s, parts):
        """Joint branches of one command per participating module."""
        per_module = []
        for c in parts:
            branches = []
            total = 0.0
            for pfn, assigns in c.updates:
                p = float(pfn(s))
                if p < 0:
                    raise ModelError(f"negative probability {p} in state {_show(names, s)}")
                total += p
                if p > 0:
                    branches.append((p, [(i, f(s)) for i, f in assigns]))
            if abs(total - 1.0) > PROB_TOL:
                raise ModelError(f"probabilities sum to {total!r} in state {_show(names, s)}")
            per_module.append(branches)
        out = {}
        for combo in itertools.product(*per_module):
            p = 1.0
            new = list(s)
            for q, assigns in combo:
                p *= q
                for i, val in assigns:
                    new[i] = _check(val, i, bools, lows, highs, names, s)
            t = tuple(new)
            out[t] = out.get(t, 0.0) + p
        return out

    s0 = tuple(init)
    index = {s0: 0}
    states = [s0]
    queue = deque([s0])
    state_ptr, choice_ptr, succ, prob, actions = [0], [0], [], [], []
    rew_lists = {name: [] for name, _ in reward_items}
    deadlocks = []
    while queue:
        s = queue.popleft()
        enabled = [g(s) for g in guard_fns]
        choices = []
        for mi, idxs in enumerate(enabled):
            for ci in idxs:
                c = commands[mi][ci]
                if c.action is None:
                    choices.append((None, (c,)))
        for a in action_order:
            parts = []
            for mi in action_modules[a]:
                cs = [commands[mi][ci] for ci in enabled[mi] if commands[mi][ci].action == a]
                if not cs:
                    break
                parts.append(cs)
            else:
                for combo in itertools.product(*parts):
                    choices.append((a, combo))
        if not choices:
            deadlocks.append(index[s])
            dists = [(None, {s: 1.0})]
        else:
            dists = [(a, distribution(s, combo)) for a, combo in choices]
        for a, d in dists:
            for t, p in d.items():
                j = index.get(t)
                if j is None:
                    j = len(states)
                    if j >= max_states:
                        raise ModelError(f"state space exceeds {max_states} states")
                    index[t] = j
                    states.append(t)
                    queue.append(t)
                succ.append(j)
                prob.append(p)
            choice_ptr.append(len(succ))
            actions.append(a)
            for name, items in reward_items:
                total = 0.0
                for act, is_state, g, val in items:
                    if (is_state or act == a) and g(s):
                        total += float(val(s))
                rew_lists[name].append(total)
        state_ptr.append(len(choice_ptr) - 1)
    if deadlocks:
        log.info("%d deadlock state(s) made absorbing", len(deadlocks))

    labels = {name: np.array([bool(f(s)) for s in states]) for name, f in label_fns.items()}
    labels["init"] = np.zeros(len(states), dtype=bool)
    labels["init"][0] = True
    labels["deadlock"] = np.zeros(len(states), dtype=bool)
    labels["deadlock"][deadlocks] = True
    return Mdp(state_ptr, choice_ptr, succ, prob, actions=actions,
               rewards={k: np.array(v) for k, v in rew_lists.items()}, labels=labels,
               variables=names, states=states, initial=0, deadlocks=deadlocks)


def _const_value(e: Expr, what: str):
    if not isinstance(e, Num):
        raise ModelError(f"'{what}' must be constant, got {e.text()}")
    return e.value


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check(val, i, bools, lows, highs, names, s):
    if bools[i]:
        if not isinstance(val, bool):
            raise ModelError(f"non-boolean value {val!r} for '{names[i]}' from {_show(names, s)}")
        return val
    if isinstance(val, bool) or val != int(val):
        raise ModelError(f"non-integer value {val!r} for '{names[i]}' from {_show(names, s)}")
    val = int(val)
    if not lows[i] <= val <= highs[i]:
        raise ModelError(f"'{names[i]}'={val} outside [{lows[i]}..{highs[i]}] "
                         f"from {_show(names, s)}")
    return val


def _show(names, s) -> str:
    return "(" + ", ".join(f"{n}={v}" for n, v in zip(names, s)) + ")"
