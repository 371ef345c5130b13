"""Guarded-command models: modules of finite-ranged variables and
probabilistic guarded commands, plus reward structures and labels."""
from __future__ import annotations

from dataclasses import dataclass, field

from .expr import Expr, Num, evaluate, substitute


class ModelError(ValueError):
    """Structurally invalid model."""


@dataclass(frozen=True)
class Constant:
    name: str
    kind: str                 # "int", "double" or "bool"
    value: Expr | None = None


@dataclass(frozen=True)
class Variable:
    name: str
    low: Expr | None          # None for bool variables
    high: Expr | None
    init: Expr

    @property
    def is_bool(self) -> bool:
        return self.low is None


@dataclass(frozen=True)
class Update:
    """One probabilistic branch; ``assignments`` empty means ``true``."""

    prob: Expr
    assignments: tuple = ()   # ((name, Expr), ...)


@dataclass(frozen=True)
class Command:
    action: str | None
    guard: Expr
    updates: tuple
    comment: str = ""


@dataclass
class Module:
    name: str
    variables: list = field(default_factory=list)
    commands: list = field(default_factory=list)
    comment: str = ""

    @property
    def alphabet(self) -> set[str]:
        return {c.action for c in self.commands if c.action}


@dataclass(frozen=True)
class RewardItem:
    action: str | None        # None with ``state=True`` is a state reward
    guard: Expr
    reward: Expr
    state: bool = False


@dataclass
class RewardStructure:
    name: str
    items: list = field(default_factory=list)


@dataclass
class GuardedCommandModel:
    constants: list = field(default_factory=list)
    formulas: dict = field(default_factory=dict)
    modules: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    labels: dict = field(default_factory=dict)
    comment: str = ""

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        seen = set()
        for c in self.constants:
            _fresh(c.name, seen)
        for name in self.formulas:
            _fresh(name, seen)
        for m in self.modules:
            for v in m.variables:
                _fresh(v.name, seen)
        owners = {v.name: m.name for m in self.modules for v in m.variables}
        for m in self.modules:
            for cmd in m.commands:
                if not cmd.updates:
                    raise ModelError(f"module {m.name}: command without updates")
                for up in cmd.updates:
                    names = [a for a, _ in up.assignments]
                    if len(names) != len(set(names)):
                        raise ModelError(f"module {m.name}: variable assigned twice in one update")
                    for a in names:
                        if owners.get(a) != m.name:
                            raise ModelError(f"module {m.name} updates '{a}', which it does not own")
                total = _constant_sum(cmd.updates)
                if total is not None and abs(total - 1.0) > 1e-12:
                    raise ModelError(f"module {m.name}: probabilities of a command sum to {total}")
        names = {r.name for r in self.rewards}
        if len(names) != len(self.rewards):
            raise ModelError("duplicate reward structure name")

    def module(self, name: str) -> Module:
        for m in self.modules:
            if m.name == name:
                return m
        raise KeyError(name)

    def variables(self) -> list:
        return [v for m in self.modules for v in m.variables]

    def constant_values(self) -> dict:
        """Constant values in declaration order (each may use earlier ones)."""
        out = {}
        for c in self.constants:
            if c.value is None:
                raise ModelError(f"constant '{c.name}' has no value")
            v = evaluate(_expand(c.value, self.formulas), out)
            out[c.name] = _coerce(v, c.kind, c.name)
        return out


def _fresh(name, seen):
    if name in seen:
        raise ModelError(f"identifier '{name}' declared twice")
    seen.add(name)


def _constant_sum(updates):
    total = 0.0
    for up in updates:
        if not isinstance(up.prob, Num):
            return None
        total += float(up.prob.value)
    return total


def _coerce(v, kind, name):
    if kind == "int":
        if isinstance(v, bool) or float(v) != int(v):
            raise ModelError(f"constant '{name}' is not an integer")
        return int(v)
    if kind == "bool":
        if not isinstance(v, bool):
            raise ModelError(f"constant '{name}' is not a boolean")
        return v
    return float(v)


def _expand(e, formulas):
    # formulas may refer to earlier formulas; expand until none remain
    for _ in range(len(formulas) + 1):
        if not (e.names() & formulas.keys()):
            return e
        e = substitute(e, formulas)
    raise ModelError("formulas are cyclic")


expand_formulas = _expand
