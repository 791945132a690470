"""Metric-expression language: parsing, printing and evaluation.

Grammar (whitespace-insensitive, ``^`` binds tighter than unary minus and is
right-associative)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?
    primary := NUMBER | 'pi' | IDENT | FUNC '(' expr ')' | '(' expr ')'

Expressions evaluate over plain floats (:func:`eval_real`) and over the
forward-mode scalars :class:`Dual1` / :class:`Dual2`, which carry exact first
(and second) partial derivatives with respect to an ordered list of chart
coordinates.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifier

FUNCTIONS = ("sin", "cos", "tan", "sinh", "cosh", "tanh", "exp", "log", "sqrt", "abs")
CONSTANTS = {"pi": math.pi}
MAX_INT_POWER = 64


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    child: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Const, Var, Neg, Call, BinOp]


def free_vars(e: Expr) -> set[str]:
    if isinstance(e, Var):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, (Neg, Call)):
        return free_vars(e.child)
    return free_vars(e.left) | free_vars(e.right)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<op>[-+*/^()])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    text = text.replace("−", "-")
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos].isspace():
            pos += 1
            continue
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise ExprSyntaxError(pos, f"unexpected character {text[pos]!r}")
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, allowed: set[str]):
        self.tokens = _tokenize(text)
        self.i = 0
        self.allowed = allowed

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, text, pos = self.take()
        if text != value or kind != "op":
            found = "end of input" if kind == "end" else repr(text)
            raise ExprSyntaxError(pos, f"expected {value!r}, found {found}")

    def parse(self) -> Expr:
        e = self.expr()
        kind, text, pos = self.peek()
        if kind != "end":
            raise ExprSyntaxError(pos, f"unexpected token {text!r}")
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        kind, text, pos = self.take()
        if kind == "num":
            return Const(float(text))
        if kind == "ident":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if text not in FUNCTIONS:
                    raise UnknownIdentifier(text)
                self.take()
                arg = self.expr()
                self.expect(")")
                return Call(text, arg)
            if text in FUNCTIONS:
                raise ExprSyntaxError(pos, f"function {text!r} needs an argument")
            if text in CONSTANTS:
                return Const(CONSTANTS[text])
            if text not in self.allowed:
                raise UnknownIdentifier(text)
            return Var(text)
        if kind == "op" and text == "(":
            e = self.expr()
            self.expect(")")
            return e
        found = "end of input" if kind == "end" else repr(text)
        raise ExprSyntaxError(pos, f"unexpected {found}")


def parse(text: str, allowed_vars: Iterable[str]) -> Expr:
    """Parse ``text`` into an AST whose variables all belong to ``allowed_vars``."""
    if not isinstance(text, str) or not text.strip():
        raise ExprSyntaxError(0, "empty expression")
    return _Parser(text, set(allowed_vars)).parse()


# ---------------------------------------------------------------------------
# Printing
# ---------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return 4 if e.op == "^" else _PREC[e.op]
    if isinstance(e, Neg):
        return 3
    if isinstance(e, Const) and (e.value < 0 or math.copysign(1.0, e.value) < 0):
        return 0
    return 5


def to_string(e: Expr) -> str:
    """Canonical text form; ``parse(to_string(e))`` rebuilds the same tree."""

    def wrap(sub: Expr, min_prec: int) -> str:
        s = to_string(sub)
        return f"({s})" if _prec(sub) < min_prec else s

    if isinstance(e, Const):
        return repr(float(e.value))
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return "-" + wrap(e.child, 3)
    if isinstance(e, Call):
        return f"{e.fn}({to_string(e.child)})"
    if e.op == "^":
        return f"{wrap(e.left, 5)}^{wrap(e.right, 3)}"
    p = _PREC[e.op]
    return f"{wrap(e.left, p)}{e.op}{wrap(e.right, p + 1)}"


# ---------------------------------------------------------------------------
# Scalar kernels shared by the evaluators
# ---------------------------------------------------------------------------


def _sign(x: float) -> float:
    return float((x > 0) - (x < 0))


def _check_log(x):
    if not x > 0:
        raise DomainError(f"log of non-positive argument {x!r}")


def _check_sqrt(x):
    if x < 0:
        raise DomainError(f"sqrt of negative argument {x!r}")


def real_unary(fn: str, x: float) -> float:
    if fn == "log":
        _check_log(x)
        return math.log(x)
    if fn == "sqrt":
        _check_sqrt(x)
        return math.sqrt(x)
    if fn == "abs":
        return abs(x)
    try:
        return getattr(math, fn)(x)
    except OverflowError as exc:
        raise DomainError(f"{fn}({x!r}) overflows") from exc


def unary_derivs(fn: str, x: float) -> tuple[float, float, float]:
    """Value, first and second derivative of a library function at ``x``."""
    if fn == "sin":
        s = math.sin(x)
        return s, math.cos(x), -s
    if fn == "cos":
        c = math.cos(x)
        return c, -math.sin(x), -c
    if fn == "tan":
        t = math.tan(x)
        d = 1.0 + t * t
        return t, d, 2.0 * t * d
    if fn == "sinh":
        s = real_unary("sinh", x)
        return s, math.cosh(x), s
    if fn == "cosh":
        c = real_unary("cosh", x)
        return c, math.sinh(x), c
    if fn == "tanh":
        t = math.tanh(x)
        d = 1.0 - t * t
        return t, d, -2.0 * t * d
    if fn == "exp":
        v = real_unary("exp", x)
        return v, v, v
    if fn == "log":
        _check_log(x)
        return math.log(x), 1.0 / x, -1.0 / (x * x)
    if fn == "sqrt":
        _check_sqrt(x)
        if x == 0:
            raise DomainError("sqrt is not differentiable at 0")
        r = math.sqrt(x)
        return r, 0.5 / r, -0.25 / (r * x)
    if fn == "abs":
        return abs(x), _sign(x), 0.0
    raise UnknownIdentifier(fn)


def int_exponent(e: float) -> int | None:
    """``int(e)`` when ``e`` is exactly an integer with ``|e| <= 64``, else None."""
    if e == math.floor(e) and abs(e) <= MAX_INT_POWER:
        return int(e)
    return None


def real_div(a: float, b: float) -> float:
    if b == 0:
        raise DomainError("division by zero")
    return a / b


def real_pow(b: float, e: float) -> float:
    n = int_exponent(e)
    if n is not None:
        if b == 0 and n < 0:
            raise DomainError("zero raised to a negative power")
        return b**n
    if not b > 0:
        raise DomainError(f"non-integer power of non-positive base {b!r}")
    return math.exp(e * math.log(b))


def pow_derivs(b: float, e: float) -> tuple[float, float, float]:
    """Value and base-derivatives of ``b^e`` for an exponent held fixed."""
    n = int_exponent(e)
    if n is not None:
        if b == 0 and n < 0:
            raise DomainError("zero raised to a negative power")
        f = b**n
        d1 = n * b ** (n - 1) if n != 0 else 0.0
        d2 = n * (n - 1) * b ** (n - 2) if n * (n - 1) != 0 else 0.0
        return f, float(d1), float(d2)
    if not b > 0:
        raise DomainError(f"non-integer power of non-positive base {b!r}")
    f = math.exp(e * math.log(b))
    return f, e * f / b, e * (e - 1.0) * f / (b * b)


# ---------------------------------------------------------------------------
# Real evaluation
# ---------------------------------------------------------------------------


def eval_real(e: Expr, bindings: Mapping[str, float]) -> float:
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        try:
            return float(bindings[e.name])
        except KeyError:
            raise UnknownIdentifier(e.name) from None
    if isinstance(e, Neg):
        return -eval_real(e.child, bindings)
    if isinstance(e, Call):
        return real_unary(e.fn, eval_real(e.child, bindings))
    a = eval_real(e.left, bindings)
    b = eval_real(e.right, bindings)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return real_div(a, b)
    return real_pow(a, b)


# ---------------------------------------------------------------------------
# Forward-mode scalars
# ---------------------------------------------------------------------------


class Dual1:
    """Value plus gradient with respect to ``m`` chart coordinates."""

    __slots__ = ("value", "grad")

    def __init__(self, value: float, grad):
        self.value = float(value)
        self.grad = np.asarray(grad, dtype=float)

    @classmethod
    def constant(cls, value: float, m: int) -> "Dual1":
        return cls(value, np.zeros(m))

    @classmethod
    def variable(cls, value: float, k: int, m: int) -> "Dual1":
        g = np.zeros(m)
        g[k] = 1.0
        return cls(value, g)

    def _lift(self, other) -> "Dual1":
        if isinstance(other, Dual1):
            return other
        return Dual1.constant(other, len(self.grad))

    def chain(self, f: float, d1: float, d2: float = 0.0) -> "Dual1":
        return Dual1(f, d1 * self.grad)

    def __neg__(self):
        return Dual1(-self.value, -self.grad)

    def __add__(self, other):
        o = self._lift(other)
        return Dual1(self.value + o.value, self.grad + o.grad)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual1(self.value - o.value, self.grad - o.grad)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        return Dual1(self.value * o.value, self.value * o.grad + o.value * self.grad)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        q = real_div(self.value, o.value)
        return Dual1(q, (self.grad - q * o.grad) / o.value)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __repr__(self):
        return f"Dual1({self.value!r}, {self.grad.tolist()!r})"


class Dual2:
    """Value, gradient and Hessian with respect to ``m`` chart coordinates.

    Every arithmetic rule builds the Hessian from symmetric pieces, so it is
    exactly symmetric.
    """

    __slots__ = ("value", "grad", "hess")

    def __init__(self, value: float, grad, hess):
        self.value = float(value)
        self.grad = np.asarray(grad, dtype=float)
        self.hess = np.asarray(hess, dtype=float)

    @classmethod
    def constant(cls, value: float, m: int) -> "Dual2":
        return cls(value, np.zeros(m), np.zeros((m, m)))

    @classmethod
    def variable(cls, value: float, k: int, m: int) -> "Dual2":
        g = np.zeros(m)
        g[k] = 1.0
        return cls(value, g, np.zeros((m, m)))

    def _lift(self, other) -> "Dual2":
        if isinstance(other, Dual2):
            return other
        return Dual2.constant(other, len(self.grad))

    def chain(self, f: float, d1: float, d2: float) -> "Dual2":
        g = self.grad
        return Dual2(f, d1 * g, d1 * self.hess + d2 * np.outer(g, g))

    def __neg__(self):
        return Dual2(-self.value, -self.grad, -self.hess)

    def __add__(self, other):
        o = self._lift(other)
        return Dual2(self.value + o.value, self.grad + o.grad, self.hess + o.hess)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._lift(other)
        return Dual2(self.value - o.value, self.grad - o.grad, self.hess - o.hess)

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        o = self._lift(other)
        cross = np.outer(self.grad, o.grad)
        return Dual2(
            self.value * o.value,
            self.value * o.grad + o.value * self.grad,
            self.value * o.hess + o.value * self.hess + (cross + cross.T),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        q = real_div(self.value, o.value)
        gq = (self.grad - q * o.grad) / o.value
        cross = np.outer(gq, o.grad)
        hq = (self.hess - q * o.hess - (cross + cross.T)) / o.value
        return Dual2(q, gq, hq)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __repr__(self):
        return f"Dual2({self.value!r}, {self.grad.tolist()!r}, {self.hess.tolist()!r})"


def _eval_dual(e: Expr, env: Mapping[str, object], lift):
    if isinstance(e, Const):
        return lift(e.value)
    if isinstance(e, Var):
        try:
            v = env[e.name]
        except KeyError:
            raise UnknownIdentifier(e.name) from None
        return v if isinstance(v, (Dual1, Dual2)) else lift(float(v))
    if isinstance(e, Neg):
        return -_eval_dual(e.child, env, lift)
    if isinstance(e, Call):
        a = _eval_dual(e.child, env, lift)
        return a.chain(*unary_derivs(e.fn, a.value))
    a = _eval_dual(e.left, env, lift)
    b = _eval_dual(e.right, env, lift)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return a * b
    if e.op == "/":
        return a / b
    if not b.grad.any():
        return a.chain(*pow_derivs(a.value, b.value))
    # exponent varies with the coordinates: b^e = exp(e log b)
    if not a.value > 0:
        raise DomainError(f"variable power of non-positive base {a.value!r}")
    la = a.chain(*unary_derivs("log", a.value))
    prod = b * la
    return prod.chain(*unary_derivs("exp", prod.value))


def _seed(kind, point_bindings: Mapping[str, float], coord_order: Sequence[str]):
    m = len(coord_order)
    env: dict[str, object] = {k: float(v) for k, v in point_bindings.items()}
    for k, name in enumerate(coord_order):
        try:
            env[name] = kind.variable(float(point_bindings[name]), k, m)
        except KeyError:
            raise UnknownIdentifier(name) from None
    return env, (lambda c: kind.constant(c, m))


def eval_dual1(e: Expr, point_bindings: Mapping[str, float], coord_order: Sequence[str]) -> Dual1:
    """Value and exact gradient of ``e`` with respect to ``coord_order``.

    Names in ``point_bindings`` that are not coordinates act as parameters
    (zero gradient).
    """
    env, lift = _seed(Dual1, point_bindings, coord_order)
    return _eval_dual(e, env, lift)


def eval_dual2(e: Expr, point_bindings: Mapping[str, float], coord_order: Sequence[str]) -> Dual2:
    env, lift = _seed(Dual2, point_bindings, coord_order)
    return _eval_dual(e, env, lift)
