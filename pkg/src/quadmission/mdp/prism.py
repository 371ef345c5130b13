"""Reading and writing models in PRISM's guarded-command syntax.

Only the subset used here is supported: one ``mdp`` model with constants,
formulas, modules of bounded integer and boolean variables, reward
structures and labels. ``export_prism(parse_prism(text))`` is a fixpoint
for any text produced by :func:`export_prism`.
"""
from __future__ import annotations

import re

from .expr import ExprError, Num, TokenStream, parse_expr, tokenize
from .model import (Command, Constant, GuardedCommandModel, Module, ModelError, RewardItem,
                    RewardStructure, Update, Variable)

MISSION_PROPERTIES = (
    ("lower and upper bounds for the probability of a successful mission",
     ('Pmin=? [ F "MissionSuccessful" ]', 'Pmax=? [ F "MissionSuccessful" ]')),
    ("lower and upper bounds for an actuator fault occurring",
     ('Pmin=? [ F "fault" ]', 'Pmax=? [ F "fault" ]')),
    ("lower and upper bounds for the expected mission time",
     ('R{"time"}min=? [ F "done" ]', 'R{"time"}max=? [ F "done" ]')),
)


class PrismError(ValueError):
    """Text that is not in the supported subset."""


# --------------------------------------------------------------------------- export

_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
RESERVED = {"mdp", "const", "int", "double", "bool", "formula", "module", "endmodule", "rewards",
            "endrewards", "label", "init", "true", "false", "min", "max", "pow", "mod", "floor",
            "ceil", "log"}


def _check_names(model: GuardedCommandModel) -> None:
    names = [c.name for c in model.constants] + list(model.formulas)
    names += [m.name for m in model.modules] + [v.name for v in model.variables()]
    names += [c.action for m in model.modules for c in m.commands if c.action]
    for n in names:
        if not _IDENT.fullmatch(n) or n in RESERVED:
            raise PrismError(f"'{n}' cannot be written as a PRISM identifier")
    for n in list(model.labels) + [r.name for r in model.rewards]:
        if '"' in n or "\n" in n:
            raise PrismError(f"label or reward name {n!r} cannot be quoted")


def export_prism(model: GuardedCommandModel) -> str:
    """Model text in PRISM syntax.

    Raises
    ------
    PrismError
        If an identifier cannot be written in the syntax.
    """
    _check_names(model)
    out = []
    _comment(out, model.comment, "")
    out.append("mdp")
    out.append("")
    if model.constants:
        for c in model.constants:
            if c.value is None:
                out.append(f"const {c.kind} {c.name};")
            else:
                out.append(f"const {c.kind} {c.name} = {c.value.text()};")
        out.append("")
    if model.formulas:
        for name, e in model.formulas.items():
            out.append(f"formula {name} = {e.text()};")
        out.append("")
    for m in model.modules:
        _comment(out, m.comment, "")
        out.append(f"module {m.name}")
        for v in m.variables:
            out.append("\t" + _variable(v))
        if m.variables and m.commands:
            out.append("")
        for cmd in m.commands:
            _comment(out, cmd.comment, "\t")
            out.append("\t" + command_text(cmd))
        out.append("endmodule")
        out.append("")
    for r in model.rewards:
        out.append(f'rewards "{r.name}"')
        for it in r.items:
            if it.state:
                out.append(f"\t{it.guard.text()} : {it.reward.text()};")
            else:
                out.append(f"\t[{it.action or ''}] {it.guard.text()} : {it.reward.text()};")
        out.append("endrewards")
        out.append("")
    for name, e in model.labels.items():
        out.append(f'label "{name}" = {e.text()};')
    text = "\n".join(out).rstrip("\n") + "\n"
    return text


def command_text(cmd: Command) -> str:
    ups = " + ".join(_update(u) for u in cmd.updates)
    return f"[{cmd.action or ''}] {cmd.guard.text()} -> {ups};"


def _update(u: Update) -> str:
    if not u.assignments:
        body = "true"
    else:
        body = "&".join(f"({n}'={e.text()})" for n, e in u.assignments)
    return f"{u.prob.text()}:{body}"


def _variable(v: Variable) -> str:
    if v.is_bool:
        return f"{v.name} : bool init {v.init.text()};"
    return f"{v.name} : [{v.low.text()}..{v.high.text()}] init {v.init.text()};"


def _comment(out, text, indent):
    for line in text.splitlines() if text else ():
        out.append(f"{indent}// {line}" if line else f"{indent}//")


def properties_text(groups=MISSION_PROPERTIES) -> str:
    """Property file listing each query under a comment line."""
    out = []
    for comment, props in groups:
        out.append(f"// {comment}")
        out.extend(f"{p};" for p in props)
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------- parse

def parse_prism(text: str) -> GuardedCommandModel:
    """Parse model text; raises :class:`PrismError` with a line number."""
    try:
        return _Parser(text).model()
    except (ExprError, ModelError) as exc:
        raise PrismError(str(exc)) from None


def parse_command(text: str) -> Command:
    """Parse one ``[action] guard -> updates;`` line."""
    p = _Parser(text)
    try:
        cmd = p.command("")
        if p.ts.peek().kind != "end":
            p.ts.error("trailing text after command")
    except ExprError as exc:
        raise PrismError(str(exc)) from None
    return cmd


class _Parser:
    def __init__(self, text: str):
        self.ts = TokenStream(tokenize(text, keep_comments=True))

    def comments(self) -> str:
        lines = []
        while self.ts.peek().kind == "comment":
            lines.append(self.ts.next().text)
        return "\n".join(lines)

    def model(self) -> GuardedCommandModel:
        ts = self.ts
        header = self.comments()
        if not ts.accept("mdp"):
            ts.error("expected model type 'mdp'")
        constants, formulas, modules, rewards, labels = [], {}, [], [], {}
        while True:
            note = self.comments()
            t = ts.peek()
            if t.kind == "end":
                break
            if ts.accept("const"):
                constants.append(self.constant())
            elif ts.accept("formula"):
                name = self.name()
                ts.expect("=")
                if name in formulas:
                    ts.error(f"formula '{name}' defined twice")
                formulas[name] = parse_expr(ts)
                ts.expect(";")
            elif ts.accept("module"):
                modules.append(self.module(note))
            elif ts.accept("rewards"):
                rewards.append(self.rewards())
            elif ts.accept("label"):
                name = self.string()
                ts.expect("=")
                if name in labels:
                    ts.error(f"label '{name}' defined twice")
                labels[name] = parse_expr(ts)
                ts.expect(";")
            else:
                ts.error(f"unexpected {t.text!r}")
        return GuardedCommandModel(constants=constants, formulas=formulas, modules=modules,
                                   rewards=rewards, labels=labels, comment=header)

    def name(self) -> str:
        t = self.ts.next()
        if t.kind != "name" or t.text.endswith("'"):
            raise ExprError(f"line {t.line}: expected an identifier, found {t.text!r}")
        return t.text

    def string(self) -> str:
        t = self.ts.next()
        if t.kind != "str":
            raise ExprError(f"line {t.line}: expected a quoted name, found {t.text!r}")
        return t.text[1:-1]

    def constant(self) -> Constant:
        ts = self.ts
        kind = "int"
        if ts.peek().text in ("int", "double", "bool"):
            kind = ts.next().text
        name = self.name()
        value = None
        if ts.accept("="):
            value = parse_expr(ts)
        ts.expect(";")
        return Constant(name, kind, value)

    def module(self, note: str) -> Module:
        ts = self.ts
        m = Module(self.name(), comment=note)
        while True:
            note = self.comments()
            if ts.accept("endmodule"):
                return m
            if ts.peek().text == "[":
                m.commands.append(self.command(note))
            else:
                m.variables.append(self.variable())

    def variable(self) -> Variable:
        ts = self.ts
        name = self.name()
        ts.expect(":")
        if ts.accept("bool"):
            init = parse_expr(ts) if ts.accept("init") else Num(False)
            ts.expect(";")
            return Variable(name, None, None, init)
        ts.expect("[")
        low = parse_expr(ts)
        ts.expect("..")
        high = parse_expr(ts)
        ts.expect("]")
        init = parse_expr(ts) if ts.accept("init") else low
        ts.expect(";")
        return Variable(name, low, high, init)

    def command(self, note: str) -> Command:
        ts = self.ts
        ts.expect("[")
        action = None
        if ts.peek().text != "]":
            action = self.name()
        ts.expect("]")
        guard = parse_expr(ts)
        ts.expect("->")
        updates = [self.update()]
        while ts.accept("+"):
            updates.append(self.update())
        ts.expect(";")
        return Command(action, guard, tuple(updates), note)

    def update(self) -> Update:
        ts = self.ts
        if self._at_assignment() or ts.peek().text == "true" and ts.peek(1).text in (";", "+"):
            return Update(Num(1), self.assignments())
        prob = parse_expr(ts)
        ts.expect(":")
        return Update(prob, self.assignments())

    def _at_assignment(self) -> bool:
        t0, t1 = self.ts.peek(), self.ts.peek(1)
        return t0.text == "(" and t1.kind == "name" and t1.text.endswith("'")

    def assignments(self) -> tuple:
        ts = self.ts
        if ts.accept("true"):
            return ()
        out = []
        while True:
            ts.expect("(")
            t = ts.next()
            if t.kind != "name" or not t.text.endswith("'"):
                raise ExprError(f"line {t.line}: expected a primed variable, found {t.text!r}")
            ts.expect("=")
            out.append((t.text[:-1], parse_expr(ts)))
            ts.expect(")")
            if not ts.accept("&"):
                return tuple(out)

    def rewards(self) -> RewardStructure:
        ts = self.ts
        r = RewardStructure(self.string())
        while True:
            self.comments()
            if ts.accept("endrewards"):
                return r
            action, state = None, True
            if ts.accept("["):
                state = False
                if ts.peek().text != "]":
                    action = self.name()
                ts.expect("]")
            guard = parse_expr(ts)
            ts.expect(":")
            value = parse_expr(ts)
            ts.expect(";")
            r.items.append(RewardItem(action, guard, value, state))
