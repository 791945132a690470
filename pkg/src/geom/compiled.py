"""Straight-line compilation of expression lists.

Hot loops (RK4 stages, sampled validation) evaluate the same few metric
components many times. :class:`CompiledExprs` turns a list of ASTs into one
generated Python function that evaluates values and, unrolled slot by slot,
the forward-mode first and second derivatives. Structurally zero derivative
slots are never emitted, and identical subtrees are evaluated once.

Two backends share the generated source: ``math`` on floats, and ``numpy``
on arrays for batches of points.
"""

from __future__ import annotations

from functools import partial
from types import SimpleNamespace
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .errors import DomainError, UnknownIdentifier


def _scalar_backend() -> SimpleNamespace:
    ns = SimpleNamespace(div=ex.real_div, pow=ex.real_pow, pow3=ex.pow_derivs)
    for fn in ex.FUNCTIONS:
        setattr(ns, fn, partial(ex.real_unary, fn))
        setattr(ns, "d_" + fn, partial(ex.unary_derivs, fn))
    return ns


def _np_check(cond, message):
    if np.any(cond):
        raise DomainError(message)


class _ArrayBackend:
    @staticmethod
    def div(a, b):
        _np_check(np.asarray(b) == 0, "division by zero")
        return a / b

    @staticmethod
    def _int_exp(e):
        if np.ndim(e) == 0:
            return ex.int_exponent(float(e))
        return None

    @classmethod
    def pow(cls, b, e):
        n = cls._int_exp(e)
        if n is not None:
            _np_check((np.asarray(b) == 0) & (n < 0), "zero raised to a negative power")
            return np.power(b, float(n)) if n < 0 else np.power(b, n)
        _np_check(~(np.asarray(b) > 0), "non-integer power of non-positive base")
        return np.exp(e * np.log(b))

    @classmethod
    def pow3(cls, b, e):
        n = cls._int_exp(e)
        if n is not None:
            _np_check((np.asarray(b) == 0) & (n < 0), "zero raised to a negative power")
            b = np.asarray(b, dtype=float)
            f = b**n
            d1 = n * b ** (n - 1) if n != 0 else np.zeros_like(b)
            d2 = n * (n - 1) * b ** (n - 2) if n * (n - 1) != 0 else np.zeros_like(b)
            return f, d1, d2
        _np_check(~(np.asarray(b) > 0), "non-integer power of non-positive base")
        f = np.exp(e * np.log(b))
        return f, e * f / b, e * (e - 1.0) * f / (b * b)

    @staticmethod
    def log(x):
        _np_check(~(np.asarray(x) > 0), "log of non-positive argument")
        return np.log(x)

    @staticmethod
    def sqrt(x):
        _np_check(np.asarray(x) < 0, "sqrt of negative argument")
        return np.sqrt(x)

    def __getattr__(self, name):
        if name.startswith("d_"):
            return getattr(self, "_derivs")(name[2:])
        return getattr(np, name)

    def _derivs(self, fn):
        def d(x):
            x = np.asarray(x, dtype=float)
            if fn == "sin":
                s = np.sin(x)
                return s, np.cos(x), -s
            if fn == "cos":
                c = np.cos(x)
                return c, -np.sin(x), -c
            if fn == "tan":
                t = np.tan(x)
                dd = 1.0 + t * t
                return t, dd, 2.0 * t * dd
            if fn == "sinh":
                return np.sinh(x), np.cosh(x), np.sinh(x)
            if fn == "cosh":
                return np.cosh(x), np.sinh(x), np.cosh(x)
            if fn == "tanh":
                t = np.tanh(x)
                dd = 1.0 - t * t
                return t, dd, -2.0 * t * dd
            if fn == "exp":
                v = np.exp(x)
                return v, v, v
            if fn == "log":
                _np_check(~(x > 0), "log of non-positive argument")
                return np.log(x), 1.0 / x, -1.0 / (x * x)
            if fn == "sqrt":
                _np_check(~(x > 0), "sqrt of non-positive argument under differentiation")
                r = np.sqrt(x)
                return r, 0.5 / r, -0.25 / (r * x)
            if fn == "abs":
                return np.abs(x), np.sign(x), np.zeros_like(x)
            raise UnknownIdentifier(fn)

        return d


SCALAR = _scalar_backend()
ARRAY = _ArrayBackend()


class _Gen:
    def __init__(self, coords: Sequence[str], order: int):
        self.coords = list(coords)
        self.slot = {name: k for k, name in enumerate(self.coords)}
        self.order = order
        self.lines: list[str] = []
        self.params: dict[str, str] = {}
        self.memo: dict[object, tuple] = {}
        self.n = 0

    def new(self, code: str) -> str:
        name = f"t{self.n}"
        self.n += 1
        self.lines.append(f"    {name} = {code}")
        return name

    def new_multi(self, code: str, k: int) -> list[str]:
        names = [f"t{self.n + i}" for i in range(k)]
        self.n += k
        self.lines.append(f"    {', '.join(names)} = {code}")
        return names

    @staticmethod
    def _mul(a: str, b: str) -> str:
        if a == "1.0":
            return b
        if b == "1.0":
            return a
        return f"{a}*{b}"

    def _sum(self, terms: list[str]) -> str | None:
        terms = [t for t in terms if t is not None]
        if not terms:
            return None
        return self.new(" + ".join(terms)) if len(terms) > 1 else terms[0]

    def emit(self, e) -> tuple:
        key = e
        if key in self.memo:
            return self.memo[key]
        node = self._emit(e)
        self.memo[key] = node
        return node

    def _chain(self, a, f: str, d1: str, d2: str | None):
        """Derivative slots of f(a) given f'(a)=d1 and f''(a)=d2."""
        grad = {k: self.new(self._mul(d1, g)) for k, g in a[1].items()}
        hess = {}
        if self.order >= 2:
            keys = set(a[2])
            gk = sorted(a[1])
            keys |= {(p, q) for i, p in enumerate(gk) for q in gk[i:]}
            for p, q in sorted(keys):
                terms = []
                if (p, q) in a[2]:
                    terms.append(self._mul(d1, a[2][(p, q)]))
                if p in a[1] and q in a[1] and d2 is not None:
                    terms.append(self._mul(self._mul(d2, a[1][p]), a[1][q]))
                hess[(p, q)] = self._sum(terms)
        return (f, grad, hess)

    def _emit(self, e) -> tuple:
        if isinstance(e, ex.Const):
            return (f"({float(e.value)!r})", {}, {})
        if isinstance(e, ex.Var):
            if e.name in self.slot:
                k = self.slot[e.name]
                return (f"x{k}", {k: "1.0"}, {})
            if e.name not in self.params:
                self.params[e.name] = f"p{len(self.params)}"
            return (self.params[e.name], {}, {})
        if isinstance(e, ex.Neg):
            a = self.emit(e.child)
            return (
                self.new(f"-{a[0]}"),
                {k: self.new(f"-{g}") for k, g in a[1].items()},
                {k: self.new(f"-{h}") for k, h in a[2].items()},
            )
        if isinstance(e, ex.Call):
            a = self.emit(e.child)
            if self.order == 0 or not a[1]:
                return (self.new(f"F.{e.fn}({a[0]})"), {}, {})
            f, d1, d2 = self.new_multi(f"F.d_{e.fn}({a[0]})", 3)
            return self._chain(a, f, d1, d2)
        if e.op == "^":
            b = self.emit(e.right)
            if b[1]:
                rewritten = ex.Call("exp", ex.BinOp("*", e.right, ex.Call("log", e.left)))
                return self.emit(rewritten)
            a = self.emit(e.left)
            if self.order == 0 or not a[1]:
                return (self.new(f"F.pow({a[0]}, {b[0]})"), {}, {})
            f, d1, d2 = self.new_multi(f"F.pow3({a[0]}, {b[0]})", 3)
            return self._chain(a, f, d1, d2)
        a = self.emit(e.left)
        b = self.emit(e.right)
        if e.op in "+-":
            v = self.new(f"{a[0]} {e.op} {b[0]}")
            grad = {}
            for k in sorted(set(a[1]) | set(b[1])):
                ga, gb = a[1].get(k), b[1].get(k)
                if gb is None:
                    grad[k] = ga
                elif ga is None:
                    grad[k] = gb if e.op == "+" else self.new(f"-{gb}")
                else:
                    grad[k] = self.new(f"{ga} {e.op} {gb}")
            hess = {}
            for k in sorted(set(a[2]) | set(b[2])):
                ha, hb = a[2].get(k), b[2].get(k)
                if hb is None:
                    hess[k] = ha
                elif ha is None:
                    hess[k] = hb if e.op == "+" else self.new(f"-{hb}")
                else:
                    hess[k] = self.new(f"{ha} {e.op} {hb}")
            return (v, grad, hess)
        if e.op == "*":
            v = self.new(f"{a[0]}*{b[0]}")
            grad = {}
            for k in sorted(set(a[1]) | set(b[1])):
                terms = []
                if k in b[1]:
                    terms.append(self._mul(a[0], b[1][k]))
                if k in a[1]:
                    terms.append(self._mul(b[0], a[1][k]))
                grad[k] = self._sum(terms)
            hess = {}
            if self.order >= 2:
                keys = set(a[2]) | set(b[2])
                for p in a[1]:
                    for q in b[1]:
                        keys.add((min(p, q), max(p, q)))
                for p, q in sorted(keys):
                    terms = []
                    if (p, q) in b[2]:
                        terms.append(self._mul(a[0], b[2][(p, q)]))
                    if (p, q) in a[2]:
                        terms.append(self._mul(b[0], a[2][(p, q)]))
                    if p in a[1] and q in b[1]:
                        terms.append(self._mul(a[1][p], b[1][q]))
                    if q in a[1] and p in b[1]:
                        terms.append(self._mul(a[1][q], b[1][p]))
                    hess[(p, q)] = self._sum(terms)
            return (v, grad, hess)
        # division
        q = self.new(f"F.div({a[0]}, {b[0]})")
        if not b[1]:
            return (
                q,
                {k: self.new(f"{g}/{b[0]}") for k, g in a[1].items()},
                {k: self.new(f"{h}/{b[0]}") for k, h in a[2].items()},
            )
        grad = {}
        for k in sorted(set(a[1]) | set(b[1])):
            num = []
            if k in a[1]:
                num.append(a[1][k])
            if k in b[1]:
                num.append(f"-{self._mul(q, b[1][k])}")
            grad[k] = self.new(f"({' + '.join(num)})/{b[0]}")
        hess = {}
        if self.order >= 2:
            keys = set(a[2]) | set(b[2])
            for p in grad:
                for r in b[1]:
                    keys.add((min(p, r), max(p, r)))
            for p, r in sorted(keys):
                num = []
                if (p, r) in a[2]:
                    num.append(a[2][(p, r)])
                if (p, r) in b[2]:
                    num.append(f"-{self._mul(q, b[2][(p, r)])}")
                if p in grad and r in b[1]:
                    num.append(f"-{grad[p]}*{b[1][r]}")
                if r in grad and p in b[1]:
                    num.append(f"-{grad[r]}*{b[1][p]}")
                hess[(p, r)] = self.new(f"({' + '.join(num)})/{b[0]}")
        return (q, grad, hess)


class CompiledExprs:
    """A list of expressions compiled to one evaluation function.

    Calling the object with a mapping of names to values returns arrays
    ``values[..., n]``, and for ``order >= 1`` ``grads[..., n, m]`` and for
    ``order == 2`` ``hess[..., n, m, m]``, where ``m = len(coords)`` and the
    leading axes are the broadcast shape of the inputs (empty for scalars).
    """

    def __init__(self, exprs: Sequence, coords: Sequence[str], order: int = 1):
        if order not in (0, 1, 2):
            raise ValueError("order must be 0, 1 or 2")
        self.exprs = list(exprs)
        self.coords = list(coords)
        self.order = order
        gen = _Gen(coords, order)
        nodes = [gen.emit(e) for e in self.exprs]
        m = len(self.coords)
        head = ["def _f(env, F, out):"]
        head += [f"    x{k} = env[{name!r}]" for k, name in enumerate(self.coords)]
        head += [f"    {local} = env[{name!r}]" for name, local in gen.params.items()]
        body = gen.lines
        vals = "[" + ", ".join(node[0] for node in nodes) + "]"
        tail = [f"    vals = {vals}"]
        if order >= 1:
            rows = []
            for node in nodes:
                rows.append("[" + ", ".join(node[1].get(k, "0.0") for k in range(m)) + "]")
            tail.append(f"    grads = [{', '.join(rows)}]")
        else:
            tail.append("    grads = None")
        if order >= 2:
            mats = []
            for node in nodes:
                mat = []
                for p in range(m):
                    row = []
                    for q in range(m):
                        key = (min(p, q), max(p, q))
                        row.append(node[2].get(key) or "0.0")
                    mat.append("[" + ", ".join(row) + "]")
                mats.append("[" + ", ".join(mat) + "]")
            tail.append(f"    hess = [{', '.join(mats)}]")
        else:
            tail.append("    hess = None")
        tail.append("    return out(vals, grads, hess)")
        self.source = "\n".join(head + body + tail)
        namespace: dict = {}
        exec(compile(self.source, "<compiled-exprs>", "exec"), namespace)
        self._fn = namespace["_f"]
        self.names = list(self.coords) + list(gen.params)

    def _call(self, env, backend, out):
        try:
            return self._fn(env, backend, out)
        except KeyError as exc:
            raise UnknownIdentifier(exc.args[0]) from None
        except ZeroDivisionError as exc:
            raise DomainError(str(exc)) from None

    def __call__(self, env: Mapping[str, float]):
        """Evaluate at a single point (floats in, small arrays out)."""
        return self._call(env, SCALAR, _scalar_out(self.order))

    def batch(self, env: Mapping[str, object]):
        """Evaluate over arrays of points; coordinate arrays broadcast together."""
        shape = np.broadcast(*[np.asarray(env[c], dtype=float) for c in self.coords]).shape if self.coords else ()
        arr_env = {k: (np.asarray(v, dtype=float) if k in self.coords else v) for k, v in env.items()}
        with np.errstate(all="ignore"):
            return self._call(arr_env, ARRAY, _array_out(self.order, shape))


def _scalar_out(order):
    def out(vals, grads, hess):
        v = np.array(vals, dtype=float)
        if order == 0:
            return v
        g = np.array(grads, dtype=float)
        if order == 1:
            return v, g
        return v, g, np.array(hess, dtype=float)

    return out


def _array_out(order, shape):
    def stack(items, axis_shape):
        # items: nested lists of scalars/arrays with the given nesting shape
        flat = np.empty(shape + axis_shape, dtype=float)
        for idx in np.ndindex(*axis_shape):
            item = items
            for i in idx:
                item = item[i]
            flat[(Ellipsis,) + idx] = item
        return flat

    def out(vals, grads, hess):
        n = len(vals)
        v = stack(vals, (n,))
        if order == 0:
            return v
        m = len(grads[0]) if n else 0
        g = stack(grads, (n, m))
        if order == 1:
            return v, g
        return v, g, stack(hess, (n, m, m))

    return out


def compile_exprs(exprs: Sequence, coords: Sequence[str], order: int = 1) -> CompiledExprs:
    return CompiledExprs(exprs, coords, order)

