"""Expressions of the guarded-command language: tokenizer, parser, printer
and a compiler to Python closures."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass


class ExprError(ValueError):
    """Malformed or unevaluable expression."""


# binding strength, loosest first
_PREC = {"?": 1, "=>": 2, "<=>": 2, "|": 3, "&": 4, "!": 5,
         "=": 6, "!=": 6, "<": 6, "<=": 6, ">": 6, ">=": 6,
         "+": 7, "-": 7, "*": 8, "/": 8, "neg": 9}
FUNCTIONS = {"min": (2, None), "max": (2, None), "pow": (2, 2), "mod": (2, 2),
             "floor": (1, 1), "ceil": (1, 1), "log": (2, 2)}


class Expr:
    """Base class; nodes are immutable and compare structurally."""

    prec = 10

    def __str__(self) -> str:
        return self.text()

    def text(self) -> str:
        raise NotImplementedError

    def names(self) -> set[str]:
        return set()


@dataclass(frozen=True)
class Num(Expr):
    value: float | int | bool

    def text(self) -> str:
        v = self.value
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, int):
            return str(v)
        return repr(float(v))

    @property
    def prec(self):
        return 9 if (not isinstance(self.value, bool) and self.value < 0) else 10


@dataclass(frozen=True)
class Var(Expr):
    name: str

    def text(self) -> str:
        return self.name

    def names(self) -> set[str]:
        return {self.name}


@dataclass(frozen=True)
class Unary(Expr):
    op: str      # "!" or "-"
    arg: Expr

    @property
    def prec(self):
        return _PREC["!"] if self.op == "!" else _PREC["neg"]

    def text(self) -> str:
        # "!x=1" parses as "!(x=1)" but is printed with the parentheses for clarity
        inner = _wrap(self.arg, 9 if self.op == "!" else self.prec, strict=self.op == "!")
        return f"{self.op}{inner}"

    def names(self) -> set[str]:
        return self.arg.names()


@dataclass(frozen=True)
class Binary(Expr):
    op: str
    left: Expr
    right: Expr

    @property
    def prec(self):
        return _PREC[self.op]

    def text(self) -> str:
        p = self.prec
        # relational operators do not chain; everything else is left-associative
        chain = p != 6
        left = _wrap(self.left, p, strict=not chain)
        right = _wrap(self.right, p, strict=True)
        return f"{left}{self.op}{right}" if p >= 6 else f"{left} {self.op} {right}"

    def names(self) -> set[str]:
        return self.left.names() | self.right.names()


@dataclass(frozen=True)
class Call(Expr):
    fn: str
    args: tuple

    def text(self) -> str:
        return f"{self.fn}(" + ",".join(a.text() for a in self.args) + ")"

    def names(self) -> set[str]:
        out = set()
        for a in self.args:
            out |= a.names()
        return out


@dataclass(frozen=True)
class Ite(Expr):
    cond: Expr
    then: Expr
    other: Expr

    prec = 1

    def text(self) -> str:
        c = _wrap(self.cond, 2, strict=False)
        t = _wrap(self.then, 2, strict=False)
        return f"{c} ? {t} : {self.other.text()}"

    def names(self) -> set[str]:
        return self.cond.names() | self.then.names() | self.other.names()


def _wrap(e: Expr, prec: int, strict: bool) -> str:
    inner = e.prec
    if inner < prec or (strict and inner == prec):
        return f"({e.text()})"
    return e.text()


# --------------------------------------------------------------------------- lexing

_TOKEN = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*)
  | (?P<num>\d+\.(?!\.)\d*(?:[eE][+-]?\d+)?|\d*\.\d+(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\d+)
  | (?P<str>"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*'?)
  | (?P<op><=>|=>|->|<=|>=|!=|\.\.|[-+*/()\[\]{}<>=!&|?:;,])
""", re.VERBOSE)


@dataclass(frozen=True)
class Token:
    kind: str   # num, str, name, op, comment, end
    text: str
    line: int


def tokenize(src: str, keep_comments: bool = False) -> list[Token]:
    out, pos, line = [], 0, 1
    while pos < len(src):
        m = _TOKEN.match(src, pos)
        if not m:
            raise ExprError(f"line {line}: unexpected character {src[pos]!r}")
        kind = m.lastgroup
        text = m.group()
        if kind == "comment":
            if keep_comments:
                out.append(Token("comment", text[2:].strip(), line))
        elif kind != "ws":
            out.append(Token(kind, text, line))
        line += text.count("\n")
        pos = m.end()
    out.append(Token("end", "", line))
    return out


class TokenStream:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.i = 0

    def peek(self, k: int = 0) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def accept(self, text: str) -> bool:
        t = self.peek()
        if t.kind in ("op", "name") and t.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.next()
        if t.text != text or t.kind in ("str", "comment"):
            raise ExprError(f"line {t.line}: expected {text!r}, found {t.text or 'end of input'!r}")
        return t

    def error(self, msg: str):
        raise ExprError(f"line {self.peek().line}: {msg}")


# --------------------------------------------------------------------------- parsing

def parse_expr(src: str | TokenStream) -> Expr:
    ts = src if isinstance(src, TokenStream) else TokenStream(tokenize(src))
    e = _parse(ts, 1)
    if not isinstance(src, TokenStream) and ts.peek().kind != "end":
        ts.error(f"unexpected {ts.peek().text!r}")
    return e


def _parse(ts: TokenStream, min_prec: int) -> Expr:
    left = _parse_prefix(ts)
    relational = False      # left is an unparenthesised comparison
    while True:
        t = ts.peek()
        if t.kind != "op":
            return left
        op = t.text
        if op == "?":
            if min_prec > 1:
                return left
            ts.next()
            then = _parse(ts, 2)
            ts.expect(":")
            other = _parse(ts, 1)
            left = Ite(left, then, other)
            relational = False
            continue
        p = _PREC.get(op)
        if p is None or op == "!" or p < min_prec:
            return left
        ts.next()
        right = _parse(ts, p + 1)
        if p == 6 and relational:
            ts.error("relational operators do not chain; add parentheses")
        relational = p == 6
        left = Binary(op, left, right)


def _parse_prefix(ts: TokenStream) -> Expr:
    t = ts.next()
    if t.kind == "num":
        if re.fullmatch(r"\d+", t.text):
            return Num(int(t.text))
        return Num(float(t.text))
    if t.kind == "name":
        if t.text == "true":
            return Num(True)
        if t.text == "false":
            return Num(False)
        if ts.peek().text == "(" and t.text in FUNCTIONS:
            ts.next()
            args = [_parse(ts, 1)]
            while ts.accept(","):
                args.append(_parse(ts, 1))
            ts.expect(")")
            lo, hi = FUNCTIONS[t.text]
            if len(args) < lo or (hi is not None and len(args) > hi):
                raise ExprError(f"line {t.line}: wrong number of arguments to {t.text}")
            return Call(t.text, tuple(args))
        return Var(t.text)
    if t.kind == "op":
        if t.text == "(":
            e = _parse(ts, 1)
            ts.expect(")")
            return e
        if t.text == "!":
            return Unary("!", _parse(ts, _PREC["!"]))
        if t.text == "-":
            arg = _parse(ts, _PREC["neg"])
            if isinstance(arg, Num) and not isinstance(arg.value, bool):
                return Num(-arg.value)
            return Unary("-", arg)
    raise ExprError(f"line {t.line}: unexpected {t.text or 'end of input'!r}")


# --------------------------------------------------------------------------- evaluation

def substitute(e: Expr, table: dict) -> Expr:
    """Replace variables named in ``table`` by the given expressions."""
    if isinstance(e, Var):
        return table.get(e.name, e)
    if isinstance(e, Unary):
        return Unary(e.op, substitute(e.arg, table))
    if isinstance(e, Binary):
        return Binary(e.op, substitute(e.left, table), substitute(e.right, table))
    if isinstance(e, Call):
        return Call(e.fn, tuple(substitute(a, table) for a in e.args))
    if isinstance(e, Ite):
        return Ite(substitute(e.cond, table), substitute(e.then, table), substitute(e.other, table))
    return e


def _floor(x):
    return int(math.floor(x))


def _ceil(x):
    return int(math.ceil(x))


def _mod(a, b):
    if b == 0:
        raise ExprError("mod by zero")
    return a % b


def _div(a, b):
    if b == 0:
        raise ExprError("division by zero")
    return a / b


def _log(x, base):
    return math.log(x, base)


_RUNTIME = {"_floor": _floor, "_ceil": _ceil, "_mod": _mod, "_div": _div, "_log": _log,
            "min": min, "max": max, "pow": pow}
_PYOP = {"&": "and", "|": "or", "=": "==", "!=": "!=", "<": "<", "<=": "<=", ">": ">",
         ">=": ">=", "+": "+", "-": "-", "*": "*"}


def to_python(e: Expr, slot: dict) -> str:
    """Python source for ``e``; variable ``v`` becomes ``s[slot[v]]``."""
    if isinstance(e, Num):
        return repr(e.value)
    if isinstance(e, Var):
        if e.name not in slot:
            raise ExprError(f"unknown identifier '{e.name}'")
        return f"s[{slot[e.name]}]"
    if isinstance(e, Unary):
        inner = to_python(e.arg, slot)
        return f"(not {inner})" if e.op == "!" else f"(-{inner})"
    if isinstance(e, Binary):
        a, b = to_python(e.left, slot), to_python(e.right, slot)
        if e.op == "/":
            return f"_div({a},{b})"
        if e.op == "=>":
            return f"((not {a}) or {b})"
        if e.op == "<=>":
            return f"(bool({a}) == bool({b}))"
        return f"({a} {_PYOP[e.op]} {b})"
    if isinstance(e, Call):
        args = ",".join(to_python(a, slot) for a in e.args)
        name = {"floor": "_floor", "ceil": "_ceil", "mod": "_mod", "log": "_log"}.get(e.fn, e.fn)
        return f"{name}({args})"
    if isinstance(e, Ite):
        return (f"({to_python(e.then, slot)} if {to_python(e.cond, slot)} "
                f"else {to_python(e.other, slot)})")
    raise ExprError(f"cannot compile {e!r}")


def runtime_namespace() -> dict:
    """Globals for code produced by :func:`to_python`."""
    return dict(_RUNTIME)


def compile_function(body: str):
    """Compile ``lambda s: body`` with the expression runtime in scope."""
    return eval(f"lambda s: {body}", dict(_RUNTIME))


def evaluate(e: Expr, values: dict | None = None):
    """Evaluate ``e`` with variables looked up in ``values``."""
    values = values or {}
    names = sorted(e.names())
    fn = compile_function(to_python(e, {n: i for i, n in enumerate(names)}))
    try:
        return fn(tuple(values[n] for n in names))
    except KeyError as exc:
        raise ExprError(f"unknown identifier {exc.args[0]!r}") from None


def fold_constants(e: Expr) -> Expr:
    """Evaluate variable-free subexpressions."""
    if isinstance(e, (Num, Var)):
        return e
    if not e.names():
        v = evaluate(e)
        if isinstance(v, float) and v.is_integer() and not _has_double(e):
            v = int(v)
        return Num(v)
    if isinstance(e, Unary):
        return Unary(e.op, fold_constants(e.arg))
    if isinstance(e, Binary):
        return Binary(e.op, fold_constants(e.left), fold_constants(e.right))
    if isinstance(e, Call):
        return Call(e.fn, tuple(fold_constants(a) for a in e.args))
    if isinstance(e, Ite):
        return Ite(fold_constants(e.cond), fold_constants(e.then), fold_constants(e.other))
    return e


def _has_double(e: Expr) -> bool:
    if isinstance(e, Num):
        return isinstance(e.value, float)
    if isinstance(e, Binary) and e.op == "/":
        return True
    if isinstance(e, Call) and e.fn in ("pow", "log"):
        return any(_has_double(a) for a in e.args) or e.fn == "log"
    kids = ()
    if isinstance(e, Unary):
        kids = (e.arg,)
    elif isinstance(e, Binary):
        kids = (e.left, e.right)
    elif isinstance(e, Call):
        kids = e.args
    elif isinstance(e, Ite):
        kids = (e.cond, e.then, e.other)
    return any(_has_double(k) for k in kids)
