"""Curves, covariant derivatives along curves, parallel transport and geodesics.

All integrations use fixed-step classical RK4. An interval ``[t0, t1]`` is
split into ``n = ceil(|t1 - t0| / dt)`` equal steps, so the step actually
taken never exceeds ``dt`` and the endpoint is hit exactly; ``t1 < t0``
integrates backwards with negative steps.

Parallel transport solves the linear system ``f' = -A(t) f`` with
``A[i, k] = sum_j vel_j gamma[i, j, k]``. Because it is linear, each RK4 step
is a fixed matrix; those are built for all steps at once from batched
Christoffel evaluations and multiplied together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .compiled import CompiledExprs
from .connection import _field_values, christoffel_array, christoffel_from_metric
from .errors import (
    DegenerateMetric,
    DomainError,
    GeomError,
    MaxSteps,
    OutOfChart,
    OutOfInterval,
    SingularFrame,
)
from .manifold import MetricSpec, TangentVector, as_point, metric_data

CHUNK_STEPS = 8192


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    max_steps: int = 10_000_000
    method: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.method != "rk4":
            raise ValueError("only the classical RK4 method is available")


def _n_steps(t0: float, t1: float, dt: float) -> int:
    if t1 == t0:
        return 0
    return max(1, math.ceil(abs(t1 - t0) / dt - 1e-9))


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------


class Curve:
    """A curve on the chart: ``states(ts)`` gives points and velocities."""

    t_lo: float
    t_hi: float

    def _check(self, ts):
        ts = np.asarray(ts, dtype=float)
        span = max(1.0, abs(self.t_lo), abs(self.t_hi))
        slack = 1e-12 * span
        if np.any(ts < self.t_lo - slack) or np.any(ts > self.t_hi + slack):
            raise OutOfInterval(f"parameter outside [{self.t_lo}, {self.t_hi}]")
        return ts

    def states(self, ts) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        pts, vel = self.states(np.array([t], dtype=float))
        return pts[0], vel[0]


class AnalyticCurve(Curve):
    def __init__(self, exprs: Sequence, interval: tuple[float, float], params=None, variable: str = "t"):
        self.params = dict(params or {})
        allowed = [variable] + list(self.params)
        self.exprs = [ex.parse(e, allowed) if isinstance(e, str) else e for e in exprs]
        self.variable = variable
        self.t_lo, self.t_hi = float(interval[0]), float(interval[1])
        if not self.t_lo <= self.t_hi:
            raise ValueError("curve interval must satisfy t_lo <= t_hi")
        self._ev = CompiledExprs(self.exprs, [variable], 1)

    def states(self, ts):
        ts = self._check(ts)
        env = dict(self.params)
        env[self.variable] = ts
        vals, grads = self._ev.batch(env)
        return vals, grads[..., 0]


class NumericCurve(Curve):
    """Cubic Hermite interpolation through trajectory samples and their velocities."""

    def __init__(self, traj: "Trajectory"):
        t = np.asarray(traj.t, dtype=float)
        if len(t) < 2:
            raise ValueError("a numeric curve needs at least two samples")
        order = np.argsort(t)
        self.t = t[order]
        self.x = np.asarray(traj.x, dtype=float)[order]
        self.v = np.asarray(traj.v, dtype=float)[order]
        self.t_lo, self.t_hi = float(self.t[0]), float(self.t[-1])

    def states(self, ts):
        ts = self._check(ts)
        idx = np.clip(np.searchsorted(self.t, ts, side="right") - 1, 0, len(self.t) - 2)
        t0 = self.t[idx]
        h = (self.t[idx + 1] - t0)[:, None]
        s = ((ts - t0)[:, None]) / h
        p0, p1 = self.x[idx], self.x[idx + 1]
        v0, v1 = self.v[idx], self.v[idx + 1]
        s2, s3 = s * s, s * s * s
        pts = (2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * h * v0 + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * h * v1
        vel = ((6 * s2 - 6 * s) * p0 + (3 * s2 - 4 * s + 1) * h * v0 + (-6 * s2 + 6 * s) * p1 + (3 * s2 - 2 * s) * h * v1) / h
        return pts, vel


def curve(spec: MetricSpec, exprs: Sequence, interval: tuple[float, float]) -> AnalyticCurve:
    """Analytic curve with components given as expressions of ``t`` (and the metric's parameters)."""
    if len(exprs) != spec.dim:
        raise ValueError(f"expected {spec.dim} curve components")
    return AnalyticCurve(exprs, interval, spec.params)


def curve_state(c: Curve, t: float, spec: MetricSpec | None = None):
    p, v = c.state(t)
    if spec is not None:
        as_point(spec, p)
    return p, v


def _time_function(spec: MetricSpec, V: Sequence, variables: Sequence[str]) -> CompiledExprs:
    allowed = list(variables) + list(spec.params)
    exprs = [ex.parse(e, allowed) if isinstance(e, str) else e for e in V]
    if len(exprs) != spec.dim:
        raise ValueError(f"expected {spec.dim} components")
    return CompiledExprs(exprs, list(variables), 1)


def covderiv_along_curve(spec: MetricSpec, c: Curve, V: Sequence, t: float) -> TangentVector:
    """``(DV)^i = dV^i/dt + sum_{j,k} vel_j gamma[i, j, k] V^k``; ``V`` are expressions of ``t``."""
    p, vel = curve_state(c, t, spec)
    ev = _time_function(spec, V, ["t"])
    env = dict(spec.params)
    env["t"] = float(t)
    vals, grads = ev(env)
    gamma = christoffel_array(spec, p)
    return TangentVector(p, grads[:, 0] + np.einsum("ijk,j,k->i", gamma, vel, vals))


def speed_at(spec: MetricSpec, c: Curve, t: float) -> float:
    p, vel = curve_state(c, t, spec)
    g = metric_data(spec, p, 0)
    return math.sqrt(abs(float(vel @ g @ vel)))


def curve_length(spec: MetricSpec, c: Curve, a: float, b: float, n_quad: int = 200) -> float:
    """Composite Simpson rule on the speed with ``n_quad`` (rounded up to even) panels."""
    if n_quad < 2:
        raise ValueError("n_quad must be >= 2")
    n = n_quad + (n_quad % 2)
    ts = np.linspace(a, b, n + 1)
    pts, vel = c.states(ts)
    g = metric_data(spec, pts, 0)
    speed = np.sqrt(np.abs(np.einsum("ni,nij,nj->n", vel, g, vel)))
    w = np.ones(n + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return float((b - a) / (3.0 * n) * np.dot(w, speed))


# ---------------------------------------------------------------------------
# Parallel transport
# ---------------------------------------------------------------------------


def _rk4_step_matrices(spec: MetricSpec, c: Curve, t_start: float, h: float, n: int) -> np.ndarray:
    """Propagators ``S[q]`` of RK4 steps ``q = 0..n-1`` starting at ``t_start``."""
    m = spec.dim
    ts = t_start + h * 0.5 * np.arange(2 * n + 1)
    pts, vel = c.states(ts)
    if not np.all(np.isfinite(pts)):
        raise OutOfChart("curve is not finite on the transport interval")
    try:
        gamma = christoffel_array(spec, pts)
    except (DomainError, DegenerateMetric) as exc:
        raise OutOfChart(f"metric cannot be evaluated along the curve: {exc}") from exc
    b = -np.einsum("nj,nijk->nik", vel, gamma)
    b0, bm, b1 = b[0:-1:2], b[1::2], b[2::2]
    k1 = b0
    k2 = bm + (0.5 * h) * (bm @ k1)
    k3 = bm + (0.5 * h) * (bm @ k2)
    k4 = b1 + h * (b1 @ k3)
    return np.eye(m) + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _ordered_product(steps: np.ndarray) -> np.ndarray:
    """``steps[-1] @ ... @ steps[0]`` by pairwise reduction."""
    while len(steps) > 1:
        if len(steps) % 2:
            tail = steps[-1:]
            steps = steps[:-1]
        else:
            tail = None
        steps = steps[1::2] @ steps[0::2]
        if tail is not None:
            steps = np.concatenate([steps, tail])
    return steps[0]


def transport_matrix(spec: MetricSpec, c: Curve, t0: float, t1: float, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """Matrix of the parallel transport map from ``c(t0)`` to ``c(t1)`` in coordinate frames."""
    c._check([t0, t1])
    n = _n_steps(t0, t1, cfg.dt)
    if n > cfg.max_steps:
        raise MaxSteps(f"{n} steps needed, max_steps = {cfg.max_steps}")
    total = np.eye(spec.dim)
    if n == 0:
        return total
    h = (t1 - t0) / n
    for start in range(0, n, CHUNK_STEPS):
        k = min(CHUNK_STEPS, n - start)
        steps = _rk4_step_matrices(spec, c, t0 + start * h, h, k)
        total = _ordered_product(steps) @ total
    return total


def parallel_transport(spec: MetricSpec, c: Curve, t0: float, t1: float, v, cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if t0 == t1:
        return v.copy()
    return transport_matrix(spec, c, t0, t1, cfg) @ v


@dataclass
class FrameTrajectory:
    t: np.ndarray
    frames: np.ndarray  # frames[n] has the transported basis vectors as columns


def parallel_frame(
    spec: MetricSpec,
    c: Curve,
    t0: float,
    basis,
    cfg: SolverConfig = SolverConfig(),
    t1: float | None = None,
) -> FrameTrajectory:
    """Transport every column of ``basis`` from ``t0`` to ``t1`` (default: end of the curve)."""
    basis = np.asarray(basis, dtype=float)
    scale = max(1.0, float(np.max(np.abs(basis))))
    if abs(np.linalg.det(basis)) <= 1e-12 * scale ** basis.shape[0]:
        raise SingularFrame("initial frame is not a basis")
    t1 = c.t_hi if t1 is None else t1
    c._check([t0, t1])
    n = _n_steps(t0, t1, cfg.dt)
    if n > cfg.max_steps:
        raise MaxSteps(f"{n} steps needed, max_steps = {cfg.max_steps}")
    frames = [basis]
    if n:
        h = (t1 - t0) / n
        for start in range(0, n, CHUNK_STEPS):
            k = min(CHUNK_STEPS, n - start)
            for s in _rk4_step_matrices(spec, c, t0 + start * h, h, k):
                frames.append(s @ frames[-1])
        ts = t0 + h * np.arange(n + 1)
        ts[-1] = t1
    else:
        ts = np.array([t0], dtype=float)
    return FrameTrajectory(ts, np.array(frames))


def transport_limit_covderiv(spec: MetricSpec, c: Curve, V: Sequence, t: float, h: float) -> TangentVector:
    """Difference quotient ``(P_{t+h -> t} V(t+h) - V(t)) / h`` with transport step ``h/100``."""
    c._check([t - h, t + h])
    ev = _time_function(spec, V, ["t"])
    env = dict(spec.params)
    env["t"] = float(t)
    v_now = ev(env)[0]
    env["t"] = float(t + h)
    v_next = ev(env)[0]
    moved = parallel_transport(spec, c, t + h, t, v_next, SolverConfig(dt=abs(h) / 100.0))
    p, _ = curve_state(c, t, spec)
    return TangentVector(p, (moved - v_now) / h)


# ---------------------------------------------------------------------------
# Geodesics
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    termination: str = "completed"
    t_exit: float | None = None
    coords: tuple[str, ...] = field(default=())

    def __len__(self):
        return len(self.t)

    def to_csv(self) -> str:
        m = self.x.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(m)] + [f"v{i + 1}" for i in range(m)]
        lines = [",".join(header)]
        for t, x, v in zip(self.t, self.x, self.v):
            lines.append(",".join(_fmt(val) for val in (t, *x, *v)))
        note = f"# termination={self.termination}"
        if self.t_exit is not None:
            note += f" t_exit={_fmt(self.t_exit)}"
        lines.append(note)
        return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return "%.17g" % x


def _geodesic_rhs(spec: MetricSpec):
    m = spec.dim
    ev = spec.evaluator(1)
    lo = np.asarray(spec.lower)
    hi = np.asarray(spec.upper)
    coords = spec.coords
    params = dict(spec.params)

    def accel(x: np.ndarray, u: np.ndarray) -> np.ndarray:
        if not (np.all(x > lo) and np.all(x < hi)):
            raise OutOfChart("stage point left the chart")
        env = dict(params)
        for k, name in enumerate(coords):
            env[name] = float(x[k])
        vals, grads = ev(env)
        g = vals.reshape(m, m)
        g = 0.5 * (g + g.T)
        d = grads.reshape(m, m, m)  # d[i, j, k] = d_k g_ij
        d = 0.5 * (d + d.transpose(1, 0, 2))
        # gamma^i_{jk} u^j u^k = ginv^{i mu} (sum_jk d_j g_{mu k} u^j u^k - 1/2 d_mu g_{jk} u^j u^k)
        w = (d @ u) @ u - 0.5 * (u @ (u @ d.reshape(m, m * m)).reshape(m, m))
        return -np.linalg.solve(g, w)

    return accel


def geodesic_shoot(spec: MetricSpec, p, v, t_span: tuple[float, float], cfg: SolverConfig = SolverConfig()) -> Trajectory:
    """Integrate ``x' = u, u'^i = -gamma[i, j, k] u^j u^k`` from ``(p, v)``.

    Stops early when a step would leave the chart (the step is discarded) or
    when ``max_steps`` is reached; the reason is stored in ``termination``.
    """
    x = as_point(spec, p).copy()
    u = np.asarray(v, dtype=float).copy()
    t0, t1 = float(t_span[0]), float(t_span[1])
    n = _n_steps(t0, t1, cfg.dt)
    h = (t1 - t0) / n if n else 0.0
    accel = _geodesic_rhs(spec)
    ts, xs, us = [t0], [x.copy()], [u.copy()]
    termination = "completed"
    t_exit = None
    n_run = min(n, cfg.max_steps)
    for q in range(n_run):
        t = t0 + q * h
        try:
            a1 = accel(x, u)
            x2, u2 = x + 0.5 * h * u, u + 0.5 * h * a1
            a2 = accel(x2, u2)
            x3, u3 = x + 0.5 * h * u2, u + 0.5 * h * a2
            a3 = accel(x3, u3)
            x4, u4 = x + h * u3, u + h * a3
            a4 = accel(x4, u4)
            x_new = x + (h / 6.0) * (u + 2.0 * u2 + 2.0 * u3 + u4)
            u_new = u + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            if not (spec.contains(x_new) and np.all(np.isfinite(u_new))):
                raise OutOfChart("step left the chart")
        except (GeomError, np.linalg.LinAlgError):
            termination = "domain_escape"
            t_exit = t
            break
        x, u = x_new, u_new
        ts.append(t1 if q == n - 1 else t + h)
        xs.append(x.copy())
        us.append(u.copy())
    else:
        if n_run < n:
            termination = "max_steps"
    return Trajectory(np.array(ts), np.array(xs), np.array(us), termination, t_exit, spec.coords)


# ---------------------------------------------------------------------------
# One-parameter families
# ---------------------------------------------------------------------------


class Family:
    """Map ``(s, t) -> point`` given by component expressions of ``s`` and ``t``."""

    def __init__(self, exprs: Sequence, s_range: tuple[float, float], t_range: tuple[float, float], params=None):
        self.params = dict(params or {})
        allowed = ["s", "t"] + list(self.params)
        self.exprs = [ex.parse(e, allowed) if isinstance(e, str) else e for e in exprs]
        self.s_range = (float(s_range[0]), float(s_range[1]))
        self.t_range = (float(t_range[0]), float(t_range[1]))
        self._ev = CompiledExprs(self.exprs, ["s", "t"], 2)

    def _env(self, s, t):
        env = dict(self.params)
        env["s"] = s
        env["t"] = t
        return env

    def _check(self, s, t):
        slack = 1e-12
        if not (self.s_range[0] - slack <= s <= self.s_range[1] + slack and self.t_range[0] - slack <= t <= self.t_range[1] + slack):
            raise OutOfInterval(f"(s, t) = ({s}, {t}) outside the family rectangle")

    def jet(self, s: float, t: float):
        """Point, first partials ``d[:, 0|1]`` and second partials ``dd[:, a, b]`` in (s, t)."""
        self._check(s, t)
        return self._ev(self._env(float(s), float(t)))

    def states(self, s, t):
        vals, grads, _ = self._ev.batch(self._env(np.asarray(s, dtype=float), np.asarray(t, dtype=float)))
        return vals, grads[..., 0], grads[..., 1]

    def transverse_curve(self, t: float) -> Curve:
        """``s -> family(s, t)`` with ``t`` frozen."""
        return _FamilyCurve(self, "s", t)

    def longitudinal_curve(self, s: float) -> Curve:
        """``t -> family(s, t)`` with ``s`` frozen."""
        return _FamilyCurve(self, "t", s)


class _FamilyCurve(Curve):
    def __init__(self, fam: Family, moving: str, frozen: float):
        self.fam = fam
        self.moving = moving
        self.frozen = float(frozen)
        self.t_lo, self.t_hi = fam.s_range if moving == "s" else fam.t_range

    def states(self, ts):
        ts = self._check(ts)
        other = np.full_like(ts, self.frozen)
        if self.moving == "s":
            pts, ds, _ = self.fam.states(ts, other)
            return pts, ds
        pts, _, dt = self.fam.states(other, ts)
        return pts, dt


def family(spec: MetricSpec, exprs: Sequence, s_range, t_range) -> Family:
    if len(exprs) != spec.dim:
        raise ValueError(f"expected {spec.dim} family components")
    return Family(exprs, s_range, t_range, spec.params)


def family_covderivs(spec: MetricSpec, fam: Family, W: Sequence, s: float, t: float) -> tuple[TangentVector, TangentVector]:
    """Covariant derivatives of ``W(s, t)`` along the transverse (``D1``, in s) and longitudinal (``D2``, in t) curves."""
    p, d, _ = fam.jet(s, t)
    p = as_point(spec, p)
    ev = _time_function(spec, W, ["s", "t"])
    env = dict(spec.params)
    env["s"], env["t"] = float(s), float(t)
    w, dw = ev(env)
    gamma = christoffel_array(spec, p)
    d1 = dw[:, 0] + np.einsum("ijk,j,k->i", gamma, d[:, 0], w)
    d2 = dw[:, 1] + np.einsum("ijk,j,k->i", gamma, d[:, 1], w)
    return TangentVector(p, d1), TangentVector(p, d2)


def family_velocity_covderivs(spec: MetricSpec, fam: Family, s: float, t: float) -> tuple[np.ndarray, np.ndarray]:
    """``D1`` of the longitudinal velocity and ``D2`` of the transverse velocity; these agree."""
    p, d, dd = fam.jet(s, t)
    gamma = christoffel_from_metric(*metric_data(spec, p, 1))
    d1_dt = dd[:, 0, 1] + np.einsum("ijk,j,k->i", gamma, d[:, 0], d[:, 1])
    d2_ds = dd[:, 1, 0] + np.einsum("ijk,j,k->i", gamma, d[:, 1], d[:, 0])
    return d1_dt, d2_ds


def field_along_curve(spec: MetricSpec, X, c: Curve, t: float) -> np.ndarray:
    """Components of an expression vector field at ``c(t)``."""
    p, _ = curve_state(c, t, spec)
    return _field_values(X, spec, p)[0]
