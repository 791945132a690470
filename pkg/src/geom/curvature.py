"""Riemann, Ricci and scalar curvature plus numerical consistency checks.

``mixed[n, i, j, k]`` holds the components of ``R(d_i, d_j) d_k = sum_n mixed[n, i, j, k] d_n``
with ``R(X, Y) Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X, Y] Z``;
``lowered[i, j, k, l] = sum_n g[l, n] mixed[n, i, j, k]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .connection import (
    _inverse,
    christoffel_array,
    christoffel_derivative_from_metric,
    covariant_gradient_r0,
)
from .errors import StepTooLarge
from .manifold import MetricSpec, TangentVector, as_point, metric_data, sample_points
from .rng import Lcg64
from .transport import Family, SolverConfig, _time_function, family_covderivs, parallel_transport


def riemann_from_christoffel(gamma: np.ndarray, dgamma: np.ndarray) -> np.ndarray:
    """Mixed components from ``gamma[..., i, j, k]`` and ``dgamma[..., l, i, j, k]``."""
    # d_i gamma^n_{jk} - d_j gamma^n_{ik}
    lin = np.einsum("...injk->...nijk", dgamma)
    lin = lin - np.swapaxes(lin, -3, -2)
    # gamma^a_{jk} gamma^n_{ia} - gamma^a_{ik} gamma^n_{ja}
    quad = np.einsum("...ajk,...nia->...nijk", gamma, gamma)
    quad = quad - np.swapaxes(quad, -3, -2)
    return lin + quad


def lower_riemann(g: np.ndarray, mixed: np.ndarray) -> np.ndarray:
    return np.einsum("...ln,...nijk->...ijkl", g, mixed)


@dataclass(frozen=True)
class RiemannAt:
    base: np.ndarray
    mixed: np.ndarray
    lowered: np.ndarray


def riemann_arrays(spec: MetricSpec, p) -> tuple[np.ndarray, np.ndarray]:
    """``(mixed, lowered)`` from exact second metric partials; ``p`` may be a batch."""
    g, dg, ddg = metric_data(spec, p, 2)
    gamma, dgamma = christoffel_derivative_from_metric(g, dg, ddg)
    mixed = riemann_from_christoffel(gamma, dgamma)
    return mixed, lower_riemann(g, mixed)


def riemann_at(spec: MetricSpec, p) -> RiemannAt:
    p = as_point(spec, p)
    mixed, lowered = riemann_arrays(spec, p)
    return RiemannAt(p, mixed, lowered)


def riemann_fd_at(spec: MetricSpec, p, h: float = 1e-4) -> RiemannAt:
    """Same tensor with Christoffel partials taken by central differences of step ``h``."""
    p = as_point(spec, p)
    parts = []
    for l in range(spec.dim):
        step = np.zeros(spec.dim)
        step[l] = h
        if not (spec.contains(p + step) and spec.contains(p - step)):
            raise StepTooLarge(f"p +/- {h:g} e_{l} leaves the chart")
        parts.append((christoffel_array(spec, p + step) - christoffel_array(spec, p - step)) / (2.0 * h))
    mixed = riemann_from_christoffel(christoffel_array(spec, p), np.stack(parts))
    return RiemannAt(p, mixed, lower_riemann(metric_data(spec, p, 0), mixed))


def curvature_apply_at(spec: MetricSpec, p, x, y, z) -> TangentVector:
    """``R(x, y) z`` at ``p``.

    Contracted against the bivector ``x y^T - y x^T`` so swapping ``x`` and ``y``
    negates the result exactly.
    """
    r = riemann_at(spec, p)
    biv = np.outer(np.asarray(x, float), np.asarray(y, float))
    biv = biv - biv.T
    comp = 0.5 * np.einsum("nijk,ij,k->n", r.mixed, biv, np.asarray(z, float))
    return TangentVector(r.base, comp)


@dataclass(frozen=True)
class RicciAt:
    base: np.ndarray
    ric: np.ndarray
    scalar: float


def ricci_at(spec: MetricSpec, p) -> RicciAt:
    """``Ric_ij = sum ginv^{ab} R_{a i j b}`` (trace of ``Z -> R(Z, X) Y``) and its trace."""
    p = as_point(spec, p)
    g = metric_data(spec, p, 0)
    g_inv = _inverse(g)
    _, low = riemann_arrays(spec, p)
    ric = np.einsum("ab,aijb->ij", g_inv, low)
    ric = 0.5 * (ric + ric.T)
    return RicciAt(p, ric, float(np.einsum("ij,ij->", g_inv, ric)))


@dataclass(frozen=True)
class IdentityResiduals:
    antisym12: float
    antisym34: float
    first_bianchi: float
    pair_symmetry: float
    scale: float

    def max(self) -> float:
        return max(self.antisym12, self.antisym34, self.first_bianchi, self.pair_symmetry)


def identity_residuals(spec: MetricSpec, p) -> IdentityResiduals:
    """Largest violations of the algebraic symmetries of the lowered tensor.

    ``scale`` is the largest component magnitude, for relative comparison.
    """
    r = riemann_at(spec, p).lowered
    anti12 = r + r.transpose(1, 0, 2, 3)
    anti34 = r + r.transpose(0, 1, 3, 2)
    bianchi = r + r.transpose(1, 2, 0, 3) + r.transpose(2, 0, 1, 3)
    pair = r - r.transpose(2, 3, 0, 1)
    return IdentityResiduals(
        float(np.max(np.abs(anti12))),
        float(np.max(np.abs(anti34))),
        float(np.max(np.abs(bianchi))),
        float(np.max(np.abs(pair))),
        float(np.max(np.abs(r))),
    )


def second_bianchi_residual(spec: MetricSpec, p, fd_step: float = 1e-4) -> float:
    """Max of the cyclic sum of ``(nabla_a R)_{bc..}`` over the derivative slot and the first pair."""
    p = as_point(spec, p)
    nab = covariant_gradient_r0(spec, lambda q: riemann_arrays(spec, q)[1], p, fd_step)
    cyc = nab + nab.transpose(1, 2, 0, 3, 4) + nab.transpose(2, 0, 1, 3, 4)
    return float(np.max(np.abs(cyc)))


def holonomy_curvature_estimate(
    spec: MetricSpec, fam: Family, z, d1: float, d2: float | None = None, cfg: SolverConfig | None = None
) -> np.ndarray:
    """``(P z - z) / (d1 d2)`` for transport around the rectangle ``[0, d1] x [0, d2]`` of a family.

    Order: along ``t`` at ``s = 0`` up to ``d2``, along ``s`` at ``t = d2`` up to
    ``d1``, back along ``t`` at ``s = d1``, back along ``s`` at ``t = 0``.
    As the rectangle shrinks this tends to ``R(d_s, d_t) z`` at the corner.
    ``d2`` defaults to ``d1``; the default step is ``min(d1, d2) / 200``.
    """
    z = np.asarray(z, dtype=float)
    d2 = d1 if d2 is None else d2
    if cfg is None:
        cfg = SolverConfig(dt=min(d1, d2) / 200.0)
    w = parallel_transport(spec, fam.longitudinal_curve(0.0), 0.0, d2, z, cfg)
    w = parallel_transport(spec, fam.transverse_curve(d2), 0.0, d1, w, cfg)
    w = parallel_transport(spec, fam.longitudinal_curve(d1), d2, 0.0, w, cfg)
    w = parallel_transport(spec, fam.transverse_curve(0.0), d1, 0.0, w, cfg)
    return (w - z) / (d1 * d2)


def commutator_curvature_check(spec: MetricSpec, fam: Family, W: Sequence, s: float, t: float, h: float = 1e-4) -> float:
    """Norm of ``D1 D2 W - D2 D1 W - R(d_s, d_t) W`` with outer derivatives by central differences."""
    p, d, _ = fam.jet(s, t)
    p = as_point(spec, p)
    gamma = christoffel_array(spec, p)

    def d1(a, b):
        return family_covderivs(spec, fam, W, a, b)[0].comp

    def d2(a, b):
        return family_covderivs(spec, fam, W, a, b)[1].comp

    # D1 of the field (s, t) -> D2 W, and D2 of (s, t) -> D1 W
    d1d2 = (d2(s + h, t) - d2(s - h, t)) / (2 * h) + np.einsum("ijk,j,k->i", gamma, d[:, 0], d2(s, t))
    d2d1 = (d1(s, t + h) - d1(s, t - h)) / (2 * h) + np.einsum("ijk,j,k->i", gamma, d[:, 1], d1(s, t))
    env = dict(spec.params)
    env["s"], env["t"] = float(s), float(t)
    w = _time_function(spec, W, ["s", "t"])(env)[0]
    expected = curvature_apply_at(spec, p, d[:, 0], d[:, 1], w).comp
    return float(np.linalg.norm(d1d2 - d2d1 - expected))


@dataclass(frozen=True)
class EinsteinReport:
    is_einstein: bool
    kappa_estimate: float
    max_deviation: float
    ric_minus_kg_eigen_range: tuple[float, float]
    n_samples: int


def einstein_check(spec: MetricSpec, n_samples: int = 20, seed: int = 0, tol: float = 1e-8) -> EinsteinReport:
    """Test ``Ric = kappa g`` with one constant ``kappa`` over seeded sample points.

    ``kappa`` is the sample mean of ``S / dim``. The deviation is the largest
    component of ``Ric - kappa g``; the eigen range is that of the operator
    ``ginv (Ric - kappa g)`` (real parts) over all samples, so a negative upper
    end means ``Ric < kappa g`` everywhere sampled.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    pts = sample_points(spec, n_samples, Lcg64(seed))
    data = []
    for p in pts:
        r = ricci_at(spec, p)
        data.append((metric_data(spec, r.base, 0), r.ric, r.scalar))
    kappa = float(np.mean([s for _, _, s in data])) / spec.dim
    max_dev = 0.0
    lo, hi = math.inf, -math.inf
    for g, ric, _ in data:
        dev = ric - kappa * g
        max_dev = max(max_dev, float(np.max(np.abs(dev))))
        eig = np.linalg.eigvals(_inverse(g) @ dev).real
        lo, hi = min(lo, float(eig.min())), max(hi, float(eig.max()))
    return EinsteinReport(max_dev <= tol, kappa, max_dev, (lo, hi), n_samples)
