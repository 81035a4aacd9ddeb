"""Scalar rate expressions attached to reactions.

Grammar (whitespace-insensitive, ``^`` binds tighter than unary minus)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Builtins are ``exp(x)`` and ``hill(x, K, n) = x^n / (K^n + x^n)``.

Expressions evaluate on floats or on numpy arrays (one entry per state in a
batch).  Division by zero, ``0^negative`` and non-finite results raise
:class:`DomainError`.  Negative values are returned as-is; the propensity layer
decides what to do with them.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Num", "Var", "Neg", "BinOp", "Call", "RateExpr",
    "RateSyntaxError", "DomainError", "BindError", "Binding",
    "parse_rate_expr", "to_text", "identifiers", "eval_rate", "lipschitz_probe",
    "compile_program", "compile_numpy",
]


class RateSyntaxError(ValueError):
    """Malformed expression text.  ``position`` is 1-based; end of input is ``len(text) + 1``."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class DomainError(ArithmeticError):
    pass


class BindError(KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unbound identifier"


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "RateExpr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "RateExpr"
    right: "RateExpr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


RateExpr = Union[Num, Var, Neg, BinOp, Call]

BUILTINS = {"exp": 1, "hill": 3}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),]))"
)


def _tokenize(text: str):
    pos = 0
    tokens = []
    while True:
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            rest = text[pos:]
            if rest.strip() == "":
                break
            bad = pos + (len(rest) - len(rest.lstrip()))
            raise RateSyntaxError(f"unexpected character {text[bad]!r}", bad + 1)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", len(text) + 1))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise RateSyntaxError(f"expected {value!r}, found {found}", pos)

    def parse(self):
        node = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise RateSyntaxError(f"unexpected {text!r}", pos)
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        if self.peek()[:2] == ("op", "-"):
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[:2] == ("op", "^"):
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        kind, text, pos = self.take()
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if self.peek()[:2] == ("op", "("):
                if text not in BUILTINS:
                    raise RateSyntaxError(f"unknown function {text!r}", pos)
                self.take()
                args = [self.expr()]
                while self.peek()[:2] == ("op", ","):
                    self.take()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != BUILTINS[text]:
                    raise RateSyntaxError(
                        f"{text}() takes {BUILTINS[text]} argument(s), got {len(args)}", pos)
                return Call(text, tuple(args))
            return Var(text)
        if kind == "op" and text == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(text)
        raise RateSyntaxError(f"unexpected {found}", pos)


def parse_rate_expr(text: str) -> RateExpr:
    if not text or not text.strip():
        raise RateSyntaxError("empty expression", 1)
    return _Parser(text).parse()


# --- printing ----------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return _PREC["neg"]
    if isinstance(node, Num) and (node.value < 0 or math.copysign(1.0, node.value) < 0):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    return repr(float(v))


def to_text(node: RateExpr) -> str:
    """Print with the minimal parentheses that re-parse to the same tree."""
    if isinstance(node, Num):
        return _fmt_num(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Call):
        return f"{node.func}({', '.join(to_text(a) for a in node.args)})"
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        if _prec(node.operand) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    p = _PREC[node.op]
    left = to_text(node.left)
    right = to_text(node.right)
    if node.op == "^":
        # the base must be an atom; the exponent may be any unary
        if _prec(node.left) <= p:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(node.left) < p:
        left = f"({left})"
    if _prec(node.right) <= p:
        right = f"({right})"
    return f"{left} {node.op} {right}"


def identifiers(node: RateExpr) -> frozenset:
    if isinstance(node, Var):
        return frozenset([node.name])
    if isinstance(node, Num):
        return frozenset()
    if isinstance(node, Neg):
        return identifiers(node.operand)
    if isinstance(node, BinOp):
        return identifiers(node.left) | identifiers(node.right)
    return frozenset().union(*(identifiers(a) for a in node.args))


# --- evaluation ----------------------------------------------------------------

@dataclass(frozen=True)
class Binding:
    """Values for every identifier of an expression: species first, then parameters."""

    species: Mapping[str, object]
    params: Mapping[str, float]

    def lookup(self, name):
        in_species = name in self.species
        in_params = name in self.params
        if in_species and in_params:
            raise BindError(f"identifier {name!r} bound both as species and parameter")
        if in_species:
            return self.species[name]
        if in_params:
            return self.params[name]
        raise BindError(f"unbound identifier {name!r}")


def _pow(a, b):
    if np.any((a == 0) & (b < 0)):
        raise DomainError("0 raised to a negative power")
    return np.power(a, b)


def _eval(node, lookup):
    if isinstance(node, Num):
        return np.float64(node.value)
    if isinstance(node, Var):
        return np.asarray(lookup(node.name), dtype=np.float64)
    if isinstance(node, Neg):
        return -_eval(node.operand, lookup)
    if isinstance(node, BinOp):
        a = _eval(node.left, lookup)
        b = _eval(node.right, lookup)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                raise DomainError("division by zero")
            return a / b
        return _pow(a, b)
    args = [_eval(a, lookup) for a in node.args]
    if node.func == "exp":
        return np.exp(args[0])
    x, k, n = args
    xn = _pow(x, n)
    denom = _pow(k, n) + xn
    if np.any(denom == 0):
        raise DomainError("hill(): K^n + x^n = 0")
    return xn / denom


def eval_rate(expr: RateExpr, binding: Binding):
    """Evaluate on a binding; returns a float, or an array for array-valued bindings."""
    with np.errstate(all="ignore"):
        value = _eval(expr, binding.lookup)
    if not np.all(np.isfinite(value)):
        raise DomainError(f"non-finite value while evaluating {to_text(expr)}")
    if np.ndim(value) == 0:
        return float(value)
    return value


def compile_numpy(expr: RateExpr, params: Mapping[str, float]):
    """Closure ``fn(species) -> value`` with parameters folded in.

    Same semantics as :func:`eval_rate` on ``Binding(species, params)`` but
    without walking the tree on every call; used by the batched limit code.
    """
    def build(node):
        if isinstance(node, Num):
            v = np.float64(node.value)
            return lambda env: v
        if isinstance(node, Var):
            name = node.name
            if name in params:
                v = np.float64(params[name])
                return lambda env: v

            def var(env):
                try:
                    return env[name]
                except KeyError:
                    raise BindError(f"unbound identifier {name!r}") from None
            return var
        if isinstance(node, Neg):
            g = build(node.operand)
            return lambda env: -g(env)
        if isinstance(node, BinOp):
            a, b = build(node.left), build(node.right)
            if node.op == "+":
                return lambda env: a(env) + b(env)
            if node.op == "-":
                return lambda env: a(env) - b(env)
            if node.op == "*":
                return lambda env: a(env) * b(env)
            if node.op == "/":
                def div(env):
                    den = b(env)
                    if np.any(den == 0):
                        raise DomainError("division by zero")
                    return a(env) / den
                return div
            return lambda env: _pow(a(env), b(env))
        args = [build(x) for x in node.args]
        if node.func == "exp":
            g = args[0]
            return lambda env: np.exp(g(env))
        gx, gk, gn = args

        def hill(env):
            n = gn(env)
            xn = _pow(gx(env), n)
            denom = _pow(gk(env), n) + xn
            if np.any(denom == 0):
                raise DomainError("hill(): K^n + x^n = 0")
            return xn / denom
        return hill

    fn = build(expr)
    text = to_text(expr)

    def run(species):
        with np.errstate(all="ignore"):
            value = fn(species)
        if not np.all(np.isfinite(value)):
            raise DomainError(f"non-finite value while evaluating {text}")
        return value
    return run


def lipschitz_probe(expr: RateExpr, box: Mapping[str, tuple], grid: int,
                    fixed: Mapping[str, float] | None = None) -> float:
    """Largest |difference quotient| between grid-adjacent points of ``box``.

    A lower bound on the Lipschitz constant over the box; a diagnostic only.
    Identifiers not in ``box`` are taken from ``fixed``.
    """
    if grid < 2:
        raise ValueError("grid must be at least 2")
    names = sorted(box)
    axes = []
    for name in names:
        lo, hi = box[name]
        if not hi > lo:
            raise ValueError(f"degenerate interval for {name!r}: {(lo, hi)}")
        axes.append(np.linspace(lo, hi, grid))
    if not names:
        eval_rate(expr, Binding({}, dict(fixed or {})))
        return 0.0
    mesh = np.meshgrid(*axes, indexing="ij")
    values = {n: m for n, m in zip(names, mesh)}
    out = eval_rate(expr, Binding(values, dict(fixed or {})))
    out = np.broadcast_to(np.asarray(out, dtype=np.float64), mesh[0].shape)
    best = 0.0
    for axis, ax in enumerate(axes):
        step = np.diff(ax)
        shape = [1] * len(axes)
        shape[axis] = grid - 1
        quot = np.abs(np.diff(out, axis=axis)) / step.reshape(shape)
        best = max(best, float(quot.max()))
    return best


# --- stack-machine form for the compiled kernels --------------------------------

OP_CONST, OP_VAR, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW, OP_EXP, OP_HILL = range(10)
_BINOPS = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}


def compile_program(expr: RateExpr, slots: Mapping[str, int], params: Mapping[str, float]):
    """Postfix program for ``expr``: ``(ops, args, max_stack_depth)``.

    Species resolve to ``slots`` (indices into the kernel's value vector);
    parameters are folded in as constants.
    """
    ops, args = [], []
    depth = [0, 0]

    def push(op, arg=0.0, delta=0):
        ops.append(op)
        args.append(float(arg))
        depth[0] += delta
        depth[1] = max(depth[1], depth[0])

    def emit(node):
        if isinstance(node, Num):
            push(OP_CONST, node.value, 1)
        elif isinstance(node, Var):
            if node.name in slots:
                push(OP_VAR, slots[node.name], 1)
            elif node.name in params:
                push(OP_CONST, params[node.name], 1)
            else:
                raise BindError(f"unbound identifier {node.name!r}")
        elif isinstance(node, Neg):
            emit(node.operand)
            push(OP_NEG)
        elif isinstance(node, BinOp):
            emit(node.left)
            emit(node.right)
            push(_BINOPS[node.op], delta=-1)
        elif node.func == "exp":
            emit(node.args[0])
            push(OP_EXP)
        else:
            for a in node.args:
                emit(a)
            push(OP_HILL, delta=-2)

    emit(expr)
    return ops, args, depth[1]

