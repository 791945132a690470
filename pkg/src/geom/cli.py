"""Command-line interface: ``geom <info|compute|geodesic|transport|verify>``.

Exit codes: 0 success, 1 numerical or verification failure, 2 input error.
Floats are written with 17 significant digits.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from typing import Sequence

import numpy as np

from .connection import christoffel_at
from .curvature import ricci_at, riemann_at
from .errors import (
    ExprSyntaxError,
    GeomError,
    OutOfChart,
    OutOfInterval,
    SchemaError,
    SymmetryError,
    UnknownIdentifier,
    UnknownPreset,
)
from .manifold import MetricSpec, as_point, gradient_at, load_spec_file, metric_data, preset, validate_spec
from .transport import SolverConfig, curve, geodesic_shoot, parallel_transport
from .verify import run_verify

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
FALLBACK_TOL = 1e-8

INPUT_ERRORS = (SchemaError, SymmetryError, UnknownPreset, ExprSyntaxError, UnknownIdentifier, OutOfInterval)


class InputError(Exception):
    """Bad command-line input; reported with exit code 2."""


def _fmt(x: float) -> str:
    return "%.17g" % x


def to_json(obj, indent: int = 0) -> str:
    """Deterministic JSON with floats printed as ``%.17g`` (non-finite values become null)."""
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{inner}"{k}": {to_json(v, indent + 1)}' for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + to_json(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt(float(obj)) if math.isfinite(obj) else "null"
    if obj is None:
        return "null"
    return '"' + str(obj).replace("\\", "\\\\").replace('"', '\\"') + '"'


def _floats(text: str, what: str) -> np.ndarray:
    try:
        vals = np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise InputError(f"{what}: expected comma-separated numbers, got {text!r}") from None
    if not np.all(np.isfinite(vals)):
        raise InputError(f"{what}: values must be finite")
    return vals


def _vector(text: str | None, spec: MetricSpec, what: str) -> np.ndarray:
    if text is None:
        raise InputError(f"--{what} is required")
    v = _floats(text, what)
    if len(v) != spec.dim:
        raise InputError(f"--{what}: expected {spec.dim} components, got {len(v)}")
    return v


def _params(items: Sequence[str]) -> dict[str, float]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise InputError(f"--param expects k=v, got {item!r}")
        try:
            out[key.strip()] = float(value)
        except ValueError:
            raise InputError(f"--param {key}: {value!r} is not a number") from None
        if not math.isfinite(out[key.strip()]):
            raise InputError(f"--param {key}: value must be finite")
    return out


def load_from_args(args) -> MetricSpec:
    if (args.spec is None) == (args.preset is None):
        raise InputError("give exactly one of --spec FILE or --preset NAME")
    params = _params(args.param)
    if args.spec is not None:
        if args.dim is not None or args.index is not None:
            raise InputError("--dim/--index only apply to the semi_euclidean preset")
        try:
            spec = load_spec_file(args.spec)
        except OSError as exc:
            raise InputError(f"cannot read {args.spec}: {exc.strerror}") from None
        unknown = sorted(set(params) - set(spec.params))
        if unknown:
            raise InputError(f"spec has no parameters {unknown}")
        if params:
            spec = dataclasses.replace(spec, params={**spec.params, **params})
        return spec
    if args.dim is not None:
        params["dim"] = args.dim
    if args.index is not None:
        params["index"] = args.index
    try:
        return preset(args.preset, params)
    except UnknownPreset:
        raise
    except GeomError as exc:
        raise InputError(str(exc)) from None


def _point(args, spec: MetricSpec) -> np.ndarray:
    p = _vector(args.point, spec, "point")
    try:
        return as_point(spec, p)
    except OutOfChart as exc:
        raise InputError(str(exc)) from None


def _default_tol() -> float:
    raw = os.environ.get("GEOM_DEFAULT_TOL")
    if raw is None:
        return FALLBACK_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise InputError(f"GEOM_DEFAULT_TOL={raw!r} is not a number") from None
    if not tol >= 0 or not math.isfinite(tol):
        raise InputError("GEOM_DEFAULT_TOL must be a finite non-negative number")
    return tol


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    try:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")
    except OSError as exc:
        raise InputError(f"cannot write {out}: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_info(args) -> int:
    spec = load_from_args(args)
    report = validate_spec(spec, tol=args.tol if args.tol is not None else 1e-10)
    index = "?" if report.index is None else str(report.index)
    lines = [
        f"dim={spec.dim} index={index}",
        f"name={spec.name}",
        "coords=" + ",".join(spec.coords),
        "domain=" + " ".join(f"{c}:({_fmt(lo)},{_fmt(hi)})" for c, lo, hi in zip(spec.coords, spec.lower, spec.upper)),
        "params=" + ",".join(f"{k}={_fmt(v)}" for k, v in sorted(spec.params.items())),
    ]
    for failure in report.failures:
        lines.append(f"validation failure: {failure}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK if report.ok else EXIT_FAIL


LAYOUTS = {
    "christoffel": "christoffel[i][j][k]: coefficient of d_i in nabla_{d_k} d_j",
    "riemann": "mixed[n][i][j][k]: coefficient of d_n in R(d_i, d_j) d_k; lowered[i][j][k][l] = sum_n g[l][n] mixed[n][i][j][k]",
    "ricci": "ricci[i][j] = Ric(d_i, d_j)",
    "scalar": "scalar curvature",
    "grad": "grad[i]: coordinate components of the gradient of f",
}


def cmd_compute(args) -> int:
    spec = load_from_args(args)
    p = _point(args, spec)
    what = args.what
    out: dict = {"quantity": what, "layout": LAYOUTS[what], "coords": list(spec.coords), "point": p}
    if what == "christoffel":
        out["christoffel"] = christoffel_at(spec, p).gamma
    elif what == "riemann":
        r = riemann_at(spec, p)
        out["mixed"] = r.mixed
        out["lowered"] = r.lowered
    elif what == "ricci":
        r = ricci_at(spec, p)
        out["ricci"] = r.ric
        out["scalar"] = r.scalar
    elif what == "scalar":
        out["scalar"] = ricci_at(spec, p).scalar
    else:
        if args.f is None:
            raise InputError("compute grad needs --f EXPR")
        out["f"] = args.f
        out["grad"] = gradient_at(spec, spec.parse(args.f), p).comp
    _emit(to_json(out), args.out)
    return EXIT_OK


def _solver(args) -> SolverConfig:
    if not (args.dt > 0 and math.isfinite(args.dt)):
        raise InputError("--dt must be a positive number")
    return SolverConfig(dt=args.dt)


def _time_span(args) -> tuple[float, float]:
    if not (math.isfinite(args.t0) and math.isfinite(args.t1)):
        raise InputError("--t0 and --t1 must be finite")
    return args.t0, args.t1


def cmd_geodesic(args) -> int:
    spec = load_from_args(args)
    p = _point(args, spec)
    v = _vector(args.velocity, spec, "velocity")
    traj = geodesic_shoot(spec, p, v, _time_span(args), _solver(args))
    _emit(traj.to_csv(), args.out)
    return EXIT_OK


def cmd_transport(args) -> int:
    spec = load_from_args(args)
    if args.curve is None:
        raise InputError("transport needs --curve \"expr;expr;...\"")
    parts = [s.strip() for s in args.curve.split(";")]
    if len(parts) != spec.dim:
        raise InputError(f"--curve: expected {spec.dim} ';'-separated components")
    t0, t1 = _time_span(args)
    c = curve(spec, parts, (min(t0, t1), max(t0, t1)))
    v = _vector(args.vector, spec, "vector")
    cfg = _solver(args)
    p0, _ = c.state(t0)
    try:
        as_point(spec, p0)
    except OutOfChart as exc:
        raise InputError(f"curve start: {exc}") from None
    try:
        w = parallel_transport(spec, c, t0, t1, v, cfg)
    except OutOfChart as exc:
        sys.stderr.write(f"error: curve leaves the chart: {exc}\n")
        return EXIT_FAIL
    p1, _ = c.state(t1)
    out = {
        "start": p0,
        "end": p1,
        "input": v,
        "output": w,
        "inner_before": float(v @ metric_data(spec, p0, 0) @ v),
        "inner_after": float(w @ metric_data(spec, p1, 0) @ w),
    }
    _emit(to_json(out), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = load_from_args(args)
    tol = args.tol if args.tol is not None else _default_tol()
    if args.samples < 1:
        raise InputError("--samples must be positive")
    report = run_verify(spec, args.samples, args.seed, tol, _solver(args).dt)
    _emit(report.format(), args.out)
    return EXIT_OK if report.ok else EXIT_FAIL


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    src = common.add_argument_group("metric source")
    src.add_argument("--spec", metavar="FILE", help="JSON spec file")
    src.add_argument("--preset", metavar="NAME", help="semi_euclidean, sphere, hyperbolic_halfplane or schwarzschild")
    src.add_argument("--param", metavar="K=V", action="append", default=[], help="parameter value (repeatable)")
    src.add_argument("--dim", type=int, help="dimension for semi_euclidean")
    src.add_argument("--index", type=int, help="index for semi_euclidean")
    common.add_argument("--point", metavar="A,B,..")
    common.add_argument("--out", metavar="PATH", help="write output to PATH instead of stdout")
    common.add_argument("--tol", type=float)

    timing = argparse.ArgumentParser(add_help=False)
    timing.add_argument("--t0", type=float, default=0.0)
    timing.add_argument("--t1", type=float, default=1.0)
    timing.add_argument("--dt", type=float, default=1e-3)

    parser = argparse.ArgumentParser(prog="geom", description="Numerical semi-Riemannian geometry on a coordinate chart.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("info", parents=[common], help="dimension, coordinates, domain and index")
    p = sub.add_parser("compute", parents=[common], help="curvature quantities or a gradient at a point")
    p.add_argument("what", choices=sorted(LAYOUTS))
    p.add_argument("--f", metavar="EXPR", help="function for grad")
    p = sub.add_parser("geodesic", parents=[common, timing], help="shoot a geodesic and write CSV")
    p.add_argument("--velocity", metavar="A,B,..")
    p = sub.add_parser("transport", parents=[common, timing], help="parallel transport along a curve")
    p.add_argument("--curve", metavar="EXPR;EXPR", help="curve components in t")
    p.add_argument("--vector", metavar="A,B,..")
    p = sub.add_parser("verify", parents=[common, timing], help="run the numerical self-checks")
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    return parser


COMMANDS = {
    "info": cmd_info,
    "compute": cmd_compute,
    "geodesic": cmd_geodesic,
    "transport": cmd_transport,
    "verify": cmd_verify,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except (InputError, *INPUT_ERRORS) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_INPUT
    except GeomError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return EXIT_FAIL
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
