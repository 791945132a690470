"""One coordinate chart of a semi-Riemannian manifold.

A :class:`MetricSpec` holds the metric components ``g_ij`` as expressions in
the chart coordinates and named parameters. Everything downstream (Christoffel
symbols, transport, curvature) reads the metric through :func:`metric_data`,
which returns ``g``, ``dg[k, i, j] = d_k g_ij`` and
``ddg[l, k, i, j] = d_l d_k g_ij`` from the compiled forward-mode evaluator,
for one point or a batch of points.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from . import expr as ex
from .compiled import CompiledExprs
from .errors import (
    BasePointMismatch,
    DomainError,
    GeomError,
    OutOfChart,
    SchemaError,
    SymmetryError,
    UnknownPreset,
)
from .linalg import DEFAULT_TOL, flat_components, invert_sym, jacobi_eigh, sharp_components, symmetrize
from .rng import Lcg64

SAMPLE_BOX = 10.0


@dataclass(frozen=True, eq=False)
class MetricSpec:
    name: str
    dim: int
    coords: tuple[str, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    g_exprs: tuple[tuple[ex.Expr, ...], ...]
    params: Mapping[str, float] = field(default_factory=dict)

    @property
    def names(self) -> tuple[str, ...]:
        return self.coords + tuple(self.params)

    def parse(self, text: str | ex.Expr, extra: Sequence[str] = ()) -> ex.Expr:
        """Parse an expression over this chart's coordinates and parameters."""
        if not isinstance(text, str):
            return text
        return ex.parse(text, list(self.names) + list(extra))

    def env(self, point) -> dict[str, object]:
        env: dict[str, object] = dict(self.params)
        batch = isinstance(point, np.ndarray) and point.ndim > 1
        for k, name in enumerate(self.coords):
            env[name] = point[..., k] if batch else float(point[k])
        return env

    def _flat_exprs(self) -> list[ex.Expr]:
        return [self.g_exprs[i][j] for i in range(self.dim) for j in range(self.dim)]

    @cached_property
    def compiled(self) -> dict[int, CompiledExprs]:
        return {}

    def evaluator(self, order: int) -> CompiledExprs:
        if order not in self.compiled:
            self.compiled[order] = CompiledExprs(self._flat_exprs(), self.coords, order)
        return self.compiled[order]

    def contains(self, p) -> bool:
        p = np.asarray(p, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return bool(np.all(np.isfinite(p)) and np.all(p > lo) and np.all(p < hi))

    def sampling_box(self) -> tuple[np.ndarray, np.ndarray]:
        """Domain box with infinite sides clipped to [-10, 10]."""
        lo = np.array([max(v, -SAMPLE_BOX) if math.isinf(v) else v for v in self.lower])
        hi = np.array([min(v, SAMPLE_BOX) if math.isinf(v) else v for v in self.upper])
        return lo, hi


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    comp: np.ndarray


@dataclass(frozen=True)
class Covector:
    base: np.ndarray
    comp: np.ndarray


def as_point(spec: MetricSpec, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1:] != (spec.dim,):
        raise ValueError(f"expected {spec.dim} coordinates, got shape {p.shape}")
    lo = np.asarray(spec.lower)
    hi = np.asarray(spec.upper)
    inside = np.all((p > lo) & (p < hi), axis=-1)
    if not np.all(inside):
        bad = p if p.ndim == 1 else p[np.argmin(inside)]
        raise OutOfChart(f"point {bad.tolist()} is outside the chart domain of {spec.name!r}")
    return p


# ---------------------------------------------------------------------------
# Loading and presets
# ---------------------------------------------------------------------------


def _bound(value, what: str) -> float:
    if isinstance(value, bool):
        raise SchemaError(f"{what}: expected a number or '-inf'/'inf'")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        text = value.strip().replace("−", "-")
        if text in ("inf", "+inf", "infinity"):
            return math.inf
        if text in ("-inf", "-infinity"):
            return -math.inf
    raise SchemaError(f"{what}: expected a number or '-inf'/'inf', got {value!r}")


def _require(doc: Mapping, key: str, kind, what: str):
    if key not in doc:
        raise SchemaError(f"missing field {key!r}")
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise SchemaError(f"field {key!r} must be {what}")
    return value


def load_spec(document: Mapping, check_symmetry: bool = True) -> MetricSpec:
    """Build a :class:`MetricSpec` from a parsed spec document (see the CLI schema)."""
    if not isinstance(document, Mapping):
        raise SchemaError("spec document must be a JSON object")
    name = document.get("name", "unnamed")
    if not isinstance(name, str):
        raise SchemaError("field 'name' must be a string")
    dim = _require(document, "dim", int, "a positive integer")
    if dim < 1:
        raise SchemaError("field 'dim' must be a positive integer")
    coords = _require(document, "coords", list, "a list of identifiers")
    if len(coords) != dim or not all(isinstance(c, str) and c.isidentifier() for c in coords):
        raise SchemaError(f"field 'coords' must list {dim} identifiers")
    if len(set(coords)) != dim:
        raise SchemaError("coordinate names must be distinct")
    params = document.get("params", {})
    if not isinstance(params, Mapping):
        raise SchemaError("field 'params' must be an object")
    for k, v in params.items():
        if not k.isidentifier() or k in coords or k in ex.FUNCTIONS or k in ex.CONSTANTS:
            raise SchemaError(f"invalid parameter name {k!r}")
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise SchemaError(f"parameter {k!r} must be a finite number")
    bad = [c for c in coords if c in ex.FUNCTIONS or c in ex.CONSTANTS]
    if bad:
        raise SchemaError(f"coordinate name {bad[0]!r} is reserved")
    domain = _require(document, "domain", Mapping, "an object with 'lower' and 'upper'")
    lower = _require(domain, "lower", list, "a list")
    upper = _require(domain, "upper", list, "a list")
    if len(lower) != dim or len(upper) != dim:
        raise SchemaError(f"domain bounds must have {dim} entries")
    lower = tuple(_bound(v, "domain.lower") for v in lower)
    upper = tuple(_bound(v, "domain.upper") for v in upper)
    if any(not lo < hi for lo, hi in zip(lower, upper)):
        raise SchemaError("domain requires lower[i] < upper[i]")
    grid = _require(document, "metric", list, f"a {dim}x{dim} grid of expressions")
    if len(grid) != dim or any(not isinstance(row, list) or len(row) != dim for row in grid):
        raise SchemaError(f"field 'metric' must be a {dim}x{dim} grid of expressions")
    allowed = list(coords) + list(params)
    g_exprs = []
    for row in grid:
        out = []
        for text in row:
            if isinstance(text, (int, float)) and not isinstance(text, bool):
                text = repr(float(text))
            if not isinstance(text, str):
                raise SchemaError("metric entries must be expression strings")
            out.append(ex.parse(text, allowed))
        g_exprs.append(tuple(out))
    spec = MetricSpec(
        name=name,
        dim=dim,
        coords=tuple(coords),
        lower=lower,
        upper=upper,
        g_exprs=tuple(g_exprs),
        params={k: float(v) for k, v in params.items()},
    )
    if check_symmetry:
        _check_symmetry(spec)
    return spec


def load_spec_text(text: str) -> MetricSpec:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc.msg}", exc.lineno, exc.colno) from None
    return load_spec(document)


def load_spec_file(path) -> MetricSpec:
    with open(path, encoding="utf-8") as fh:
        return load_spec_text(fh.read())


def _check_symmetry(spec: MetricSpec, n_samples: int = 8, seed: int = 0) -> None:
    pairs = [
        (i, j)
        for i in range(spec.dim)
        for j in range(i + 1, spec.dim)
        if spec.g_exprs[i][j] != spec.g_exprs[j][i]
    ]
    if not pairs:
        return
    rng = Lcg64(seed)
    lo, hi = spec.sampling_box()
    for _ in range(n_samples):
        p = rng.in_box(lo, hi)
        env = spec.env(p)
        for i, j in pairs:
            try:
                a = ex.eval_real(spec.g_exprs[i][j], env)
                b = ex.eval_real(spec.g_exprs[j][i], env)
            except DomainError:
                continue
            if abs(a - b) > 1e-12 * max(1.0, abs(a), abs(b)):
                raise SymmetryError(
                    f"g[{i}][{j}] = {a!r} but g[{j}][{i}] = {b!r} at {p.tolist()}"
                )


def _diag_spec(name, coords, diag, lower, upper, params) -> MetricSpec:
    m = len(coords)
    grid = [["0"] * m for _ in range(m)]
    for i, text in enumerate(diag):
        grid[i][i] = text
    return load_spec(
        {
            "name": name,
            "dim": m,
            "coords": list(coords),
            "domain": {"lower": list(lower), "upper": list(upper)},
            "metric": grid,
            "params": params,
        }
    )


PRESETS = ("semi_euclidean", "sphere", "hyperbolic_halfplane", "schwarzschild")


def preset(name: str, params: Mapping[str, float] | None = None, **kwargs) -> MetricSpec:
    """Built-in charts.

    ``semi_euclidean`` takes ``dim`` and ``index`` (coordinates ``x1..xm``),
    ``sphere`` takes ``r``, ``schwarzschild`` takes ``M``.
    """
    p = dict(params or {})
    p.update(kwargs)
    inf = math.inf
    if name == "semi_euclidean":
        m = int(p.pop("dim", 4))
        nu = int(p.pop("index", 0))
        if m < 1 or not 0 <= nu <= m:
            raise GeomError(f"semi_euclidean needs 1 <= dim and 0 <= index <= dim, got {m}, {nu}")
        if p:
            raise GeomError(f"unexpected parameters for semi_euclidean: {sorted(p)}")
        coords = [f"x{i + 1}" for i in range(m)]
        diag = ["-1"] * nu + ["1"] * (m - nu)
        return _diag_spec(f"semi_euclidean({m},{nu})", coords, diag, [-inf] * m, [inf] * m, {})
    if name == "sphere":
        r = float(p.pop("r", 1.0))
        if p:
            raise GeomError(f"unexpected parameters for sphere: {sorted(p)}")
        return _diag_spec(
            "sphere",
            ["theta", "phi"],
            ["r^2", "r^2*sin(theta)^2"],
            [0.01, -inf],
            [math.pi - 0.01, inf],
            {"r": r},
        )
    if name == "hyperbolic_halfplane":
        if p:
            raise GeomError(f"unexpected parameters for hyperbolic_halfplane: {sorted(p)}")
        return _diag_spec(
            "hyperbolic_halfplane", ["x", "y"], ["1/y^2", "1/y^2"], [-inf, 0.01], [inf, inf], {}
        )
    if name == "schwarzschild":
        mass = float(p.pop("M", 1.0))
        if p:
            raise GeomError(f"unexpected parameters for schwarzschild: {sorted(p)}")
        return _diag_spec(
            "schwarzschild",
            ["t", "r", "theta", "phi"],
            ["-(1-2*M/r)", "1/(1-2*M/r)", "r^2", "r^2*sin(theta)^2"],
            [-inf, 2.0 * mass * 1.05, 0.01, -inf],
            [inf, inf, math.pi - 0.01, inf],
            {"M": mass},
        )
    raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# Pointwise metric data
# ---------------------------------------------------------------------------


def metric_data(spec: MetricSpec, p, order: int = 0):
    """``g`` (order 0), ``(g, dg)`` (order 1) or ``(g, dg, ddg)`` (order 2).

    ``p`` is one point of shape ``(m,)`` or a batch ``(..., m)``; outputs carry
    the same leading axes. Index layout: ``g[..., i, j]``, ``dg[..., k, i, j]``,
    ``ddg[..., l, k, i, j]``. All are symmetrized in ``(i, j)``.
    """
    p = as_point(spec, p)
    m = spec.dim
    ev = spec.evaluator(order)
    if p.ndim == 1:
        out = ev(spec.env(p))
    else:
        out = ev.batch(spec.env(p))
    if order == 0:
        return symmetrize(out.reshape(p.shape[:-1] + (m, m)))
    vals, grads = out[0], out[1]
    lead = p.shape[:-1]
    g = symmetrize(vals.reshape(lead + (m, m)))
    # grads[..., i*m + j, k] -> dg[..., k, i, j]
    dg = np.moveaxis(grads.reshape(lead + (m, m, m)), -1, -3)
    dg = symmetrize(dg)
    if order == 1:
        return g, dg
    ddg = out[2].reshape(lead + (m, m, m, m))
    ddg = np.moveaxis(ddg, (-2, -1), (-4, -3))
    return g, dg, symmetrize(ddg)


def metric_at(spec: MetricSpec, p) -> np.ndarray:
    return metric_data(spec, np.asarray(p, dtype=float), 0)


def metric_partials_at(spec: MetricSpec, p) -> np.ndarray:
    return metric_data(spec, np.asarray(p, dtype=float), 1)[1]


def metric_second_partials_at(spec: MetricSpec, p) -> np.ndarray:
    return metric_data(spec, np.asarray(p, dtype=float), 2)[2]


def inverse_metric_at(spec: MetricSpec, p, tol: float = DEFAULT_TOL) -> np.ndarray:
    return invert_sym(metric_at(spec, p), tol)


def tangent(spec: MetricSpec, p, comp) -> TangentVector:
    return TangentVector(as_point(spec, p), np.asarray(comp, dtype=float))


def _same_base(v, w):
    if not np.array_equal(v.base, w.base):
        raise BasePointMismatch(f"{v.base.tolist()} != {w.base.tolist()}")


def inner_at(spec: MetricSpec, v: TangentVector, w: TangentVector) -> float:
    _same_base(v, w)
    g = metric_at(spec, v.base)
    return float(v.comp @ g @ w.comp)


def flat_field_at(spec: MetricSpec, v: TangentVector) -> Covector:
    return Covector(v.base, flat_components(metric_at(spec, v.base), v.comp))


def sharp_field_at(spec: MetricSpec, omega: Covector) -> TangentVector:
    g_inv = invert_sym(metric_at(spec, omega.base))
    return TangentVector(omega.base, sharp_components(g_inv, omega.comp))


def gradient_at(spec: MetricSpec, f, p) -> TangentVector:
    """Metric gradient: components ``sum_i ginv[j, i] * d_i f``."""
    p = as_point(spec, p)
    f = spec.parse(f)
    df = ex.eval_dual1(f, spec.env(p), spec.coords).grad
    g_inv = invert_sym(metric_at(spec, p))
    return TangentVector(p, sharp_components(g_inv, df))


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    n_samples: int
    symmetry_max: float
    min_abs_eigenvalue: float
    index: int | None
    failures: list[tuple[int, list[float], str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def sample_points(spec: MetricSpec, n: int, rng: Lcg64, box=None) -> np.ndarray:
    lo, hi = box if box is not None else spec.sampling_box()
    return np.array([rng.in_box(lo, hi) for _ in range(n)])


def validate_spec(spec: MetricSpec, n_samples: int = 100, seed: int = 0, tol: float = DEFAULT_TOL) -> ValidationReport:
    """Sample the chart and check symmetry, non-degeneracy and constant index."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = Lcg64(seed)
    pts = sample_points(spec, n_samples, rng)
    sym_max = 0.0
    min_eig = math.inf
    index = None
    failures = []
    grid = spec._flat_exprs()
    m = spec.dim
    for s, p in enumerate(pts):
        env = spec.env(p)
        try:
            raw = np.array([ex.eval_real(e, env) for e in grid]).reshape(m, m)
        except DomainError as exc:
            failures.append((s, p.tolist(), f"domain error: {exc}"))
            continue
        scale = max(1.0, float(np.max(np.abs(raw))))
        asym = float(np.max(np.abs(raw - raw.T))) / scale
        sym_max = max(sym_max, asym)
        if asym > 1e-12:
            failures.append((s, p.tolist(), f"asymmetric metric (relative {asym:.3e})"))
            continue
        eig, _ = jacobi_eigh(symmetrize(raw))
        min_eig = min(min_eig, float(np.min(np.abs(eig))))
        if np.any(np.abs(eig) <= tol):
            failures.append((s, p.tolist(), "degenerate metric"))
            continue
        nu = int(np.sum(eig < 0))
        if index is None:
            index = nu
        elif nu != index:
            failures.append((s, p.tolist(), f"index {nu} differs from {index}"))
    return ValidationReport(n_samples, sym_max, min_eig, index, failures)

