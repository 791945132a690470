"""Named numerical self-checks for a metric spec, driven by a seeded generator.

Each check reports its worst residual and the threshold it was held to.
Thresholds are base values multiplied by ``tol / 1e-8``, so ``tol = 1e-8``
gives the defaults and ``tol = 0`` makes every check with a nonzero residual
fail. Expensive checks run on the first few samples only. Results depend
only on the metric, the seed and the arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .connection import covariant_gradient_r0, koszul_residual, torsion_residual, vector_field
from .curvature import (
    commutator_curvature_check,
    curvature_apply_at,
    einstein_check,
    holonomy_curvature_estimate,
    identity_residuals,
    second_bianchi_residual,
)
from .errors import GeomError
from .manifold import MetricSpec, gradient_at, metric_data, sample_points
from .rng import Lcg64
from .transport import AnalyticCurve, SolverConfig, family, geodesic_shoot, transport_matrix

BASE_TOL = 1e-8
EXPENSIVE_SAMPLES = 5


@dataclass(frozen=True)
class CheckResult:
    name: str
    residual: float
    threshold: float
    passed: bool
    informational: bool = False
    note: str = ""


@dataclass
class VerifyReport:
    checks: list[CheckResult]

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if not c.informational)

    def failing(self) -> list[str]:
        return [c.name for c in self.checks if not c.informational and not c.passed]

    def format(self) -> str:
        lines = [f"{'check':<22} {'residual':<24} {'threshold':<24} status"]
        for c in self.checks:
            status = "INFO" if c.informational else ("PASS" if c.passed else "FAIL")
            line = f"{c.name:<22} {'%.17g' % c.residual:<24} {'%.17g' % c.threshold:<24} {status}"
            if c.note:
                line += f"  {c.note}"
            lines.append(line)
        lines.append("result: " + ("all checks passed" if self.ok else "failed: " + ", ".join(self.failing())))
        return "\n".join(lines)


def _num(x: float) -> str:
    return "(%.17g)" % x


def random_polynomial(spec: MetricSpec, rng: Lcg64, scale: float = 1.0) -> str:
    """Quadratic polynomial with coefficients uniform in ``[-scale, scale]``.

    The variables are the coordinates rescaled to ``[-1, 1]`` over the sampling
    box, so values and derivatives stay of order one anywhere in the box.
    """
    lo, hi = spec.sampling_box()
    unit = [f"(({a} - {_num(0.5 * (l + h))}) / {_num(0.5 * (h - l))})" for a, l, h in zip(spec.coords, lo, hi)]
    terms = [_num(rng.uniform(-scale, scale))]
    for i, a in enumerate(unit):
        terms.append(f"{_num(rng.uniform(-scale, scale))}*{a}")
        for b in unit[i:]:
            terms.append(f"{_num(rng.uniform(-scale, scale))}*{a}*{b}")
    return " + ".join(terms)


def _interior_box(spec: MetricSpec, margin: float = 0.05):
    lo, hi = spec.sampling_box()
    width = hi - lo
    return lo + margin * width, hi - margin * width


def _segment(spec: MetricSpec, p: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Shrink ``d`` until the segment ``p + [0, 1] d`` stays inside the chart."""
    for _ in range(60):
        if spec.contains(p + d):
            return d
        d = 0.5 * d
    return np.zeros_like(d)


def run_verify(spec: MetricSpec, n_samples: int = 50, seed: int = 0, tol: float = BASE_TOL, dt: float = 1e-3) -> VerifyReport:
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    factor = tol / BASE_TOL
    rng = Lcg64(seed)
    lo, hi = _interior_box(spec)
    pts = sample_points(spec, n_samples, rng, box=(lo, hi))
    few = pts[: min(EXPENSIVE_SAMPLES, n_samples)]
    m = spec.dim
    checks: list[CheckResult] = []

    def add(name, residual, base, note=""):
        thr = base * factor
        checks.append(CheckResult(name, float(residual), thr, bool(residual <= thr), False, note))

    # connection
    add("torsion", max(torsion_residual(spec, p) for p in pts), 0.0)
    grad_g = [np.max(np.abs(covariant_gradient_r0(spec, spec.g_exprs, p))) for p in pts]
    add("metric_compatibility", max(grad_g), 1e-7)

    worst = 0.0
    for p in pts:
        fields = []
        for _ in range(3):
            comps = [random_polynomial(spec, rng, 1.0) for _ in range(m)]
            fields.append(vector_field(spec, comps))
        worst = max(worst, koszul_residual(spec, *fields, p))
    add("koszul", worst, 1e-9)

    worst = 0.0
    for p in pts:
        f = spec.parse(random_polynomial(spec, rng))
        x = np.array([rng.normal() for _ in range(m)])
        gf = gradient_at(spec, f, p).comp
        g = metric_data(spec, p, 0)
        df = ex.eval_dual1(f, spec.env(p), spec.coords).grad
        worst = max(worst, abs(float(gf @ g @ x) - float(df @ x)))
    add("gradient_duality", worst, 1e-9)

    # transport and geodesics
    cfg = SolverConfig(dt=dt)
    iso = inv = 0.0
    for p in few:
        d = _segment(spec, p, 0.3 * np.array([rng.normal() for _ in range(m)]))
        curve = AnalyticCurve([f"{_num(p[i])} + {_num(d[i])}*t" for i in range(m)], (0.0, 1.0))
        v = np.array([rng.normal() for _ in range(m)])
        w = np.array([rng.normal() for _ in range(m)])
        try:
            fwd = transport_matrix(spec, curve, 0.0, 1.0, cfg)
            back = transport_matrix(spec, curve, 1.0, 0.0, cfg)
        except GeomError:
            continue
        g0 = metric_data(spec, p, 0)
        g1 = metric_data(spec, p + d, 0)
        before = float(v @ g0 @ w)
        after = float((fwd @ v) @ g1 @ (fwd @ w))
        iso = max(iso, abs(after - before) / (1.0 + abs(v @ g0 @ v) + abs(w @ g0 @ w)))
        inv = max(inv, float(np.max(np.abs(back @ fwd - np.eye(m)))))
    add("transport_isometry", iso, 1e-7, "relative")
    add("transport_inverse", inv, 1e-8)

    drift = 0.0
    for p in few:
        u = np.array([rng.normal() for _ in range(m)])
        g0 = metric_data(spec, p, 0)
        s0 = float(u @ g0 @ u)
        if abs(s0) > 1e-12:
            u = u / math.sqrt(abs(s0))
            s0 = math.copysign(1.0, s0)
        traj = geodesic_shoot(spec, p, u, (0.0, 1.0), cfg)
        g = metric_data(spec, traj.x, 0)
        s = np.einsum("ni,nij,nj->n", traj.v, g, traj.v)
        drift = max(drift, float(np.max(np.abs(s - s0))) / max(abs(s0), 1e-300))
    add("geodesic_speed", drift, 1e-6, "relative")

    # curvature
    sym = bianchi1 = 0.0
    for p in pts:
        r = identity_residuals(spec, p)
        ref = max(r.scale, 1e-300)
        sym = max(sym, max(r.antisym12, r.antisym34, r.pair_symmetry) / ref if r.scale else 0.0)
        bianchi1 = max(bianchi1, r.first_bianchi / ref if r.scale else 0.0)
    add("riemann_symmetries", sym, 1e-10, "relative")
    add("first_bianchi", bianchi1, 1e-10, "relative")

    worst = 0.0
    for p in few:
        try:
            worst = max(worst, second_bianchi_residual(spec, p, 1e-4))
        except GeomError:
            continue
    add("second_bianchi", worst, 1e-5)

    if m >= 2:
        checks.append(_holonomy_check(spec, few[0], rng, factor))
        worst = 0.0
        for p in few:
            fam = family(spec, [f"{_num(p[0])} + s + 0.5*s*t", f"{_num(p[1])} + t"] + [_num(p[i]) for i in range(2, m)], (-0.05, 0.05), (-0.05, 0.05))
            w = [f"{_num(rng.uniform(-1, 1))} + s*t + {_num(rng.uniform(-1, 1))}*s^2" for _ in range(m)]
            try:
                worst = max(worst, commutator_curvature_check(spec, fam, w, 0.01, -0.01, 1e-4))
            except GeomError:
                continue
        add("commutator", worst, 1e-5)

    report = einstein_check(spec, len(few), seed, tol)
    checks.append(
        CheckResult("einstein", report.max_deviation, tol, report.is_einstein, True, "kappa=%.17g" % report.kappa_estimate)
    )
    return VerifyReport(checks)


def _holonomy_check(spec: MetricSpec, p: np.ndarray, rng: Lcg64, factor: float) -> CheckResult:
    """Halving the loop size should halve the holonomy-estimate error (first order)."""
    m = spec.dim
    exprs = [f"{_num(p[0])} + s", f"{_num(p[1])} + t"] + [_num(p[i]) for i in range(2, m)]
    fam = family(spec, exprs, (0.0, 0.05), (0.0, 0.05))
    z = np.array([rng.normal() for _ in range(m)])
    x = np.zeros(m)
    y = np.zeros(m)
    x[0] = y[1] = 1.0
    try:
        exact = curvature_apply_at(spec, p, x, y, z).comp
        errs = [float(np.linalg.norm(holonomy_curvature_estimate(spec, fam, z, d, d) - exact)) for d in (4e-2, 2e-2, 1e-2)]
    except GeomError as exc:
        return CheckResult("holonomy_convergence", math.inf, 0.0, False, False, f"error: {exc}")
    flat_thr = 1e-9 * factor
    if max(errs) <= flat_thr:
        return CheckResult("holonomy_convergence", max(errs), flat_thr, True, False, "flat")
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    dev = max(abs(r - 2.0) for r in ratios)
    thr = 0.4 * factor
    return CheckResult("holonomy_convergence", dev, thr, dev <= thr, False, "ratios=%.6f,%.6f" % tuple(ratios))
