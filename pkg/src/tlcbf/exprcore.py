"""Scalar expressions over (x, t), Boolean literal formulae and state labeling.

Expressions are immutable trees. Evaluation compiles a tree once into a
postfix tape and runs it through the selected kernel backend, which returns
the value together with the exact state gradient and time derivative.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

from tlcbf import kernels as K

DEFAULT_NORM_DELTA = 1e-9


class ExprSyntaxError(ValueError):
    """Malformed expression or formula text; ``offset`` is a 0-based position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class EvaluationError(ArithmeticError):
    pass


# ---------------------------------------------------------------- expressions


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return BinOp("+", self, _lift(other))

    def __radd__(self, other):
        return BinOp("+", _lift(other), self)

    def __sub__(self, other):
        return BinOp("-", self, _lift(other))

    def __rsub__(self, other):
        return BinOp("-", _lift(other), self)

    def __mul__(self, other):
        return BinOp("*", self, _lift(other))

    def __rmul__(self, other):
        return BinOp("*", _lift(other), self)

    def __truediv__(self, other):
        return BinOp("/", self, _lift(other))

    def __neg__(self):
        return Neg(self)

    def __str__(self):
        return to_text(self)

    @cached_property
    def tape(self) -> "Tape":
        return compile_tape(self)

    def children(self) -> tuple["Expr", ...]:
        return ()

    def max_var(self) -> int:
        return max((c.max_var() for c in self.children()), default=0)

    def uses_time(self) -> bool:
        return any(c.uses_time() for c in self.children())


def _lift(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float


@dataclass(frozen=True, eq=True)
class Var(Expr):
    index: int  # 1-based, as written in text

    def max_var(self) -> int:
        return self.index


@dataclass(frozen=True, eq=True)
class Time(Expr):
    def uses_time(self) -> bool:
        return True


@dataclass(frozen=True, eq=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr

    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True, eq=True)
class Neg(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class Sqrt(Expr):
    arg: Expr

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class Pow(Expr):
    arg: Expr
    exponent: float

    def children(self):
        return (self.arg,)


@dataclass(frozen=True, eq=True)
class Norm2(Expr):
    """Euclidean norm, evaluated as sqrt(sum e_i^2 + delta^2)."""

    args: tuple[Expr, ...]
    delta: float = field(default=DEFAULT_NORM_DELTA, compare=False)

    def children(self):
        return self.args


@dataclass(frozen=True, eq=True)
class Logistic(Expr):
    """1 / (1 + exp(-rate * (t + shift)))."""

    rate: float
    shift: float

    def uses_time(self) -> bool:
        return True


# -------------------------------------------------------------------- tape


@dataclass(frozen=True)
class Tape:
    code: np.ndarray
    iarg: np.ndarray
    farg: np.ndarray


_BINOPS = {"+": K.OP_ADD, "-": K.OP_SUB, "*": K.OP_MUL, "/": K.OP_DIV}


def compile_tape(e: Expr) -> Tape:
    code: list[int] = []
    iarg: list[int] = []
    farg: list[tuple[float, float]] = []

    def emit(op, i=0, f0=0.0, f1=0.0):
        code.append(op)
        iarg.append(i)
        farg.append((f0, f1))

    def walk(node: Expr):
        if isinstance(node, Const):
            emit(K.OP_CONST, f0=node.value)
        elif isinstance(node, Var):
            emit(K.OP_VAR, i=node.index - 1)
        elif isinstance(node, Time):
            emit(K.OP_TIME)
        elif isinstance(node, BinOp):
            walk(node.left)
            walk(node.right)
            emit(_BINOPS[node.op])
        elif isinstance(node, Neg):
            walk(node.arg)
            emit(K.OP_NEG)
        elif isinstance(node, Sqrt):
            walk(node.arg)
            emit(K.OP_SQRT)
        elif isinstance(node, Pow):
            walk(node.arg)
            emit(K.OP_POW, f0=node.exponent)
        elif isinstance(node, Norm2):
            for a in node.args:
                walk(a)
            emit(K.OP_NORM2, i=len(node.args), f0=node.delta)
        elif isinstance(node, Logistic):
            emit(K.OP_LOGISTIC, f0=node.rate, f1=node.shift)
        else:
            raise TypeError(f"not an expression node: {node!r}")

    walk(e)
    return Tape(
        np.asarray(code, dtype=np.int64),
        np.asarray(iarg, dtype=np.int64),
        np.asarray(farg, dtype=np.float64).reshape(-1, 2),
    )


_ERRORS = {
    K.ERR_DIV_ZERO: "division by zero",
    K.ERR_SQRT_NEG: "sqrt of negative argument",
    K.ERR_POW_DOMAIN: "fractional power of negative base",
}


def eval_grad(e: Expr, x, t: float = 0.0) -> tuple[float, np.ndarray, float]:
    """Value, state gradient and time derivative of ``e`` at ``(x, t)``."""
    tape = e.tape
    if e.max_var() > len(x):
        raise ValueError(f"expression uses x{e.max_var()} but state has dimension {len(x)}")
    status, v, g, d = K.eval_tape(tape.code, tape.iarg, tape.farg, x, float(t))
    if status:
        raise EvaluationError(f"{_ERRORS[status]} evaluating {to_text(e)}")
    return v, g, d


def evaluate(e: Expr, x, t: float = 0.0) -> float:
    return eval_grad(e, x, t)[0]


# ------------------------------------------------------------------ printing

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _num(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_text(e: Expr) -> str:
    """Render ``e`` in the expression grammar; ``parse_expr`` inverts it."""
    return _fmt(e, 0)


def _fmt(e: Expr, ctx: int) -> str:
    if isinstance(e, Const):
        s = _num(e.value)
        return f"({s})" if e.value < 0 else s
    if isinstance(e, Var):
        return f"x{e.index}"
    if isinstance(e, Time):
        return "t"
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        s = f"{_fmt(e.left, p)} {e.op} {_fmt(e.right, p + 1)}"
        return f"({s})" if p < ctx else s
    if isinstance(e, Neg):
        s = f"-{_fmt(e.arg, 3)}"
        return f"({s})" if ctx >= 4 else s
    if isinstance(e, Sqrt):
        return f"sqrt({_fmt(e.arg, 0)})"
    if isinstance(e, Pow):
        return f"{_fmt(e.arg, 4)}^{_num(e.exponent)}" if e.exponent >= 0 else f"{_fmt(e.arg, 4)}^({_num(e.exponent)})"
    if isinstance(e, Norm2):
        return "norm2(" + ", ".join(_fmt(a, 0) for a in e.args) + ")"
    if isinstance(e, Logistic):
        return f"logistic({_num(e.rate)}, {_num(e.shift)})"
    raise TypeError(f"not an expression node: {e!r}")


# ------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^(),&|!]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    toks = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            off = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[off]!r}", off)
        kind = m.lastgroup
        toks.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(("eof", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def at(self, value: str) -> bool:
        return self.tok[0] == "op" and self.tok[1] == value

    def expect(self, value: str):
        if not self.at(value):
            kind, val, off = self.tok
            got = "end of input" if kind == "eof" else repr(val)
            raise ExprSyntaxError(f"expected {value!r}, got {got}", off)
        return self.advance()

    def finish(self):
        if self.tok[0] != "eof":
            raise ExprSyntaxError(f"unexpected {self.tok[1]!r}", self.tok[2])


class _ExprParser(_Parser):
    def __init__(self, text: str, n: int, delta: float):
        super().__init__(text)
        self.n = n
        self.delta = delta

    def expr(self) -> Expr:
        node = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.factor()
        while self.at("*") or self.at("/"):
            op = self.advance()[1]
            node = BinOp(op, node, self.factor())
        return node

    def factor(self) -> Expr:
        if self.at("-"):
            self.advance()
            return Neg(self.factor())
        node = self.atom()
        if self.at("^"):
            self.advance()
            node = Pow(node, self.signed_number())
        return node

    def signed_number(self) -> float:
        if self.at("("):
            self.advance()
            v = self.signed_number()
            self.expect(")")
            return v
        sign = 1.0
        if self.at("-") or self.at("+"):
            sign = -1.0 if self.advance()[1] == "-" else 1.0
        kind, val, off = self.tok
        if kind != "num":
            raise ExprSyntaxError("expected a number", off)
        self.advance()
        return sign * float(val)

    def atom(self) -> Expr:
        kind, val, off = self.tok
        if kind == "num":
            self.advance()
            return Const(float(val))
        if kind == "op" and val == "(":
            self.advance()
            # negative constants print as "(-c)"
            node = self.expr()
            self.expect(")")
            if isinstance(node, Neg) and isinstance(node.arg, Const):
                return Const(-node.arg.value)
            return node
        if kind == "name":
            self.advance()
            if val == "t":
                return Time()
            if re.fullmatch(r"x\d+", val):
                idx = int(val[1:])
                if not 1 <= idx <= self.n:
                    raise ExprSyntaxError(f"variable {val} out of range 1..{self.n}", off)
                return Var(idx)
            if val == "sqrt":
                self.expect("(")
                node = self.expr()
                self.expect(")")
                return Sqrt(node)
            if val == "norm2":
                self.expect("(")
                args = [self.expr()]
                while self.at(","):
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                return Norm2(tuple(args), self.delta)
            if val == "logistic":
                self.expect("(")
                b = self.signed_number()
                self.expect(",")
                c = self.signed_number()
                self.expect(")")
                return Logistic(b, c)
            raise ExprSyntaxError(f"unknown name {val!r}", off)
        got = "end of input" if kind == "eof" else repr(val)
        raise ExprSyntaxError(f"unexpected {got}", off)


def parse_expr(text: str, n: int, delta: float = DEFAULT_NORM_DELTA) -> Expr:
    """Parse ``text`` into an expression over ``x1..xn`` and ``t``."""
    p = _ExprParser(text, n, delta)
    node = p.expr()
    p.finish()
    return node


# ------------------------------------------------------------------ formulae


class LitFormula:
    __slots__ = ()

    def __str__(self):
        return formula_text(self)


@dataclass(frozen=True)
class Lit(LitFormula):
    name: str
    positive: bool = True

    def negate(self) -> "Lit":
        return Lit(self.name, not self.positive)


@dataclass(frozen=True)
class And(LitFormula):
    left: LitFormula
    right: LitFormula


@dataclass(frozen=True)
class Or(LitFormula):
    left: LitFormula
    right: LitFormula


@dataclass(frozen=True)
class Truth(LitFormula):
    value: bool


TOP = Truth(True)
BOT = Truth(False)


def conj(a: LitFormula, b: LitFormula) -> LitFormula:
    return And(a, b)


def disj_all(items: Sequence[LitFormula]) -> LitFormula:
    if not items:
        return BOT
    out = items[0]
    for f in items[1:]:
        out = Or(out, f)
    return out


def negate(f: LitFormula) -> LitFormula:
    """Negation pushed down to the literals (De Morgan)."""
    if isinstance(f, Lit):
        return f.negate()
    if isinstance(f, Truth):
        return Truth(not f.value)
    if isinstance(f, And):
        return Or(negate(f.left), negate(f.right))
    if isinstance(f, Or):
        return And(negate(f.left), negate(f.right))
    raise TypeError(f)


def formula_text(f: LitFormula, ctx: int = 0) -> str:
    if isinstance(f, Truth):
        return "true" if f.value else "false"
    if isinstance(f, Lit):
        return ("" if f.positive else "!") + f.name
    if isinstance(f, And):
        s = f"{formula_text(f.left, 2)} & {formula_text(f.right, 2)}"
        return s
    if isinstance(f, Or):
        s = f"{formula_text(f.left, 1)} | {formula_text(f.right, 1)}"
        return f"({s})" if ctx >= 2 else s
    raise TypeError(f)


def literals(f: LitFormula) -> list[Lit]:
    """Literal leaves in left-to-right order, duplicates kept."""
    if isinstance(f, Lit):
        return [f]
    if isinstance(f, (And, Or)):
        return literals(f.left) + literals(f.right)
    return []


def prop_names(f: LitFormula) -> set[str]:
    return {lit.name for lit in literals(f)}


class _FormulaParser(_Parser):
    def disj(self) -> LitFormula:
        node = self.conj()
        while self.at("|"):
            self.advance()
            node = Or(node, self.conj())
        return node

    def conj(self) -> LitFormula:
        node = self.unary()
        while self.at("&"):
            self.advance()
            node = And(node, self.unary())
        return node

    def unary(self) -> LitFormula:
        if self.at("!"):
            self.advance()
            return negate(self.unary())
        if self.at("("):
            self.advance()
            node = self.disj()
            self.expect(")")
            return node
        kind, val, off = self.tok
        if kind == "name":
            self.advance()
            if val == "true":
                return TOP
            if val == "false":
                return BOT
            return Lit(val)
        got = "end of input" if kind == "eof" else repr(val)
        raise ExprSyntaxError(f"expected a literal, got {got}", off)


def parse_formula(text: str, known: Iterable[str] | None = None) -> LitFormula:
    """Parse a literal formula; ``!`` is pushed onto literals immediately."""
    p = _FormulaParser(text)
    f = p.disj()
    p.finish()
    if known is not None:
        known = set(known)
        unknown = sorted(prop_names(f) - known)
        if unknown:
            raise KeyError(f"unknown proposition(s) {', '.join(unknown)} in {text!r}")
    return f


# ------------------------------------------------------------------ labeling


@dataclass(frozen=True)
class PropositionDef:
    name: str
    zfun: Expr

    def __post_init__(self):
        if self.zfun.uses_time():
            raise ValueError(f"state function of {self.name} must not depend on t")


def _prop_map(props) -> Mapping[str, PropositionDef]:
    if isinstance(props, Mapping):
        return props
    return {p.name: p for p in props}


def label(x, props: Iterable[PropositionDef]) -> frozenset[str]:
    """Names of the propositions whose state function is nonnegative at x."""
    return frozenset(p.name for p in _prop_map(props).values() if evaluate(p.zfun, x) >= 0.0)


def holds(f: LitFormula, x, props) -> bool:
    """Truth of ``f`` at state x; boundary states satisfy both polarities."""
    pm = _prop_map(props)
    cache: dict[str, float] = {}

    def z(name):
        if name not in cache:
            if name not in pm:
                raise KeyError(f"unknown proposition {name!r}")
            cache[name] = evaluate(pm[name].zfun, x)
        return cache[name]

    def rec(g):
        if isinstance(g, Truth):
            return g.value
        if isinstance(g, Lit):
            v = z(g.name)
            return v >= 0.0 if g.positive else -v >= 0.0
        if isinstance(g, And):
            return rec(g.left) and rec(g.right)
        if isinstance(g, Or):
            return rec(g.left) or rec(g.right)
        raise TypeError(g)

    return rec(f)


def holds_labels(f: LitFormula, labels: Iterable[str]) -> bool:
    """Truth of ``f`` under an explicit label set (literal true iff in set)."""
    labels = labels if isinstance(labels, (set, frozenset)) else set(labels)
    if isinstance(f, Truth):
        return f.value
    if isinstance(f, Lit):
        return (f.name in labels) == f.positive
    if isinstance(f, And):
        return holds_labels(f.left, labels) and holds_labels(f.right, labels)
    if isinstance(f, Or):
        return holds_labels(f.left, labels) or holds_labels(f.right, labels)
    raise TypeError(f)


def assignments(names: Sequence[str]):
    """All truth assignments over ``names`` as label sets, in binary order."""
    for bits in itertools.product((False, True), repeat=len(names)):
        yield {n for n, b in zip(names, bits) if b}, dict(zip(names, bits))


def is_finite(v: float) -> bool:
    return math.isfinite(v)


MAX_SIMPLIFY_PROPS = 20


def simplify(f: LitFormula) -> LitFormula:
    """Reduce ``f`` to true, false or a single conjunction of literals when
    its truth table allows; otherwise return ``f`` unchanged.

    Literals keep their order of first appearance and duplicates vanish.
    """
    names = list(dict.fromkeys(lit.name for lit in literals(f)))
    if isinstance(f, Truth) or len(names) > MAX_SIMPLIFY_PROPS:
        return f
    sat = [lab for lab, _ in assignments(names) if holds_labels(f, lab)]
    if not sat:
        return BOT
    if len(sat) == 2 ** len(names):
        return TOP
    cube = []
    for n in names:
        inside = sum(n in lab for lab in sat)
        if inside == len(sat):
            cube.append(Lit(n, True))
        elif inside == 0:
            cube.append(Lit(n, False))
    if len(sat) != 2 ** (len(names) - len(cube)):
        return f
    out = cube[0]
    for lit in cube[1:]:
        out = And(out, lit)
    return out
