"""Levi-Civita connection in coordinates.

Layout convention: ``gamma[i, j, k]`` is the coefficient with
``nabla_{d_k} d_j = sum_i gamma[i, j, k] d_i`` (upper index first). For the
Levi-Civita connection it is symmetric in ``(j, k)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .compiled import CompiledExprs
from .errors import DegenerateMetric, StepTooLarge
from .linalg import DEFAULT_TOL
from .manifold import MetricSpec, TangentVector, as_point, metric_data


def _inverse(g: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    det = np.linalg.det(g)
    if np.any(np.abs(det) <= tol):
        raise DegenerateMetric(f"|det g| <= {tol:g}")
    inv = np.linalg.inv(g)
    return 0.5 * (inv + np.swapaxes(inv, -1, -2))


def _lowered_combination(dg: np.ndarray) -> np.ndarray:
    """``L[mu, j, k] = d_j g_{mu k} + d_k g_{j mu} - d_mu g_{k j}`` (leading axes kept)."""
    return (
        np.einsum("...jmk->...mjk", dg)
        + np.einsum("...kjm->...mjk", dg)
        - dg
    )


def _sym_jk(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def christoffel_from_metric(g: np.ndarray, dg: np.ndarray, g_inv: np.ndarray | None = None) -> np.ndarray:
    if g_inv is None:
        g_inv = _inverse(g)
    gamma = 0.5 * np.einsum("...im,...mjk->...ijk", g_inv, _lowered_combination(dg))
    return _sym_jk(gamma)


def christoffel_derivative_from_metric(g, dg, ddg, g_inv=None):
    """Christoffel symbols and their exact partials ``dgamma[l, i, j, k] = d_l gamma[i, j, k]``.

    Uses ``d_l ginv = -ginv (d_l g) ginv`` and second metric partials, so no
    differencing is involved.
    """
    if g_inv is None:
        g_inv = _inverse(g)
    low = _lowered_combination(dg)
    gamma = _sym_jk(0.5 * np.einsum("...im,...mjk->...ijk", g_inv, low))
    d_inv = -np.einsum("...ia,...lab,...bm->...lim", g_inv, dg, g_inv)
    d_low = (
        np.einsum("...ljmk->...lmjk", ddg)
        + np.einsum("...lkjm->...lmjk", ddg)
        - ddg
    )
    dgamma = 0.5 * (
        np.einsum("...lim,...mjk->...lijk", d_inv, low)
        + np.einsum("...im,...lmjk->...lijk", g_inv, d_low)
    )
    return gamma, _sym_jk(dgamma)


@dataclass(frozen=True)
class ChristoffelAt:
    base: np.ndarray
    gamma: np.ndarray


def christoffel_array(spec: MetricSpec, p) -> np.ndarray:
    """Christoffel symbols as a bare array; ``p`` may be a batch ``(..., m)``."""
    g, dg = metric_data(spec, p, 1)
    return christoffel_from_metric(g, dg)


def christoffel_at(spec: MetricSpec, p) -> ChristoffelAt:
    p = as_point(spec, p)
    return ChristoffelAt(p, christoffel_array(spec, p))


def torsion_residual(spec: MetricSpec, p) -> float:
    gamma = christoffel_at(spec, p).gamma
    return float(np.max(np.abs(gamma - np.swapaxes(gamma, 1, 2))))


class VectorField:
    """Vector field on the chart given by component expressions in the coordinate frame."""

    def __init__(self, spec: MetricSpec, components: Sequence):
        if len(components) != spec.dim:
            raise ValueError(f"expected {spec.dim} components, got {len(components)}")
        self.spec = spec
        self.exprs = [spec.parse(c) for c in components]
        self._ev = CompiledExprs(self.exprs, spec.coords, 1)

    def at(self, p) -> tuple[np.ndarray, np.ndarray]:
        """Components ``X^i`` and Jacobian ``J[i, k] = d_k X^i`` at ``p``."""
        return self._ev(self.spec.env(np.asarray(p, dtype=float)))


def vector_field(spec: MetricSpec, components: Sequence) -> VectorField:
    return VectorField(spec, components)


def _field_values(X, spec, p):
    if isinstance(X, VectorField):
        return X.at(p)
    x = np.asarray(X, dtype=float)
    return x, np.zeros((spec.dim, spec.dim))


def covderiv_vector_field_at(spec: MetricSpec, X, Y, p) -> TangentVector:
    """``(nabla_X Y)^i = X^k d_k Y^i + X^k gamma[i, j, k] Y^j``."""
    p = as_point(spec, p)
    gamma = christoffel_array(spec, p)
    x, _ = _field_values(X, spec, p)
    y, jy = _field_values(Y, spec, p)
    return TangentVector(p, jy @ x + np.einsum("ijk,j,k->i", gamma, y, x))


def lie_bracket_at(spec: MetricSpec, X, Y, p) -> np.ndarray:
    """``[X, Y]^i = X^k d_k Y^i - Y^k d_k X^i``."""
    x, jx = _field_values(X, spec, p)
    y, jy = _field_values(Y, spec, p)
    return jy @ x - jx @ y


def koszul_residual(spec: MetricSpec, X, Y, Z, p) -> float:
    """``|2<nabla_X Y, Z> - RHS|`` with RHS the six-term Koszul expression.

    The left side goes through the Christoffel symbols; the right side uses
    only metric values, metric partials and field Jacobians.
    """
    p = as_point(spec, p)
    g, dg = metric_data(spec, p, 1)
    fields = {name: _field_values(F, spec, p) for name, F in (("X", X), ("Y", Y), ("Z", Z))}

    def inner(a, b):
        return float(a @ g @ b)

    def deriv_inner(along, a, b):
        # along^k d_k <a, b>
        u, _ = fields[along]
        va, ja = fields[a]
        vb, jb = fields[b]
        return float(
            np.einsum("k,kij,i,j->", u, dg, va, vb) + (ja @ u) @ g @ vb + va @ g @ (jb @ u)
        )

    def bracket(a, b):
        va, ja = fields[a]
        vb, jb = fields[b]
        return jb @ va - ja @ vb

    x, y, z = fields["X"][0], fields["Y"][0], fields["Z"][0]
    rhs = (
        deriv_inner("X", "Y", "Z")
        + deriv_inner("Y", "Z", "X")
        - deriv_inner("Z", "X", "Y")
        - inner(x, bracket("Y", "Z"))
        + inner(y, bracket("Z", "X"))
        + inner(z, bracket("X", "Y"))
    )
    lhs = 2.0 * inner(covderiv_vector_field_at(spec, X, Y, p).comp, z)
    return abs(lhs - rhs)


TensorSource = Callable[[np.ndarray], np.ndarray] | Sequence


def _tensor_with_partials(spec: MetricSpec, T, p, fd_step: float):
    """Components ``T[i1..ir]`` and partials ``dT[k, i1..ir]`` at ``p``."""
    if callable(T):
        center = np.asarray(T(p), dtype=float)
        parts = []
        for k in range(spec.dim):
            step = np.zeros(spec.dim)
            step[k] = fd_step
            if not (spec.contains(p + step) and spec.contains(p - step)):
                raise StepTooLarge(f"p +/- {fd_step:g} e_{k} leaves the chart")
            parts.append((np.asarray(T(p + step)) - np.asarray(T(p - step))) / (2.0 * fd_step))
        return center, np.stack(parts)
    arr = np.asarray(T, dtype=object)
    shape = arr.shape
    exprs = [spec.parse(e) for e in arr.ravel()]
    vals, grads = CompiledExprs(exprs, spec.coords, 1)(spec.env(p))
    return vals.reshape(shape), np.moveaxis(grads.reshape(shape + (spec.dim,)), -1, 0)


def covariant_gradient_r0(spec: MetricSpec, T: TensorSource, p, fd_step: float = 1e-5) -> np.ndarray:
    """``nablaT[k, i1..ir] = d_k T_{i1..ir} - sum_a gamma[mu, i_a, k] T_{..mu..}``.

    ``T`` is either a callable returning the covariant components at a point
    (partials by central differences of step ``fd_step``) or a nested
    sequence of component expressions (exact partials).
    """
    p = as_point(spec, p)
    gamma = christoffel_array(spec, p)
    t, dt = _tensor_with_partials(spec, T, p, fd_step)
    r = t.ndim
    out = dt.copy()
    for a in range(r):
        td = np.tensordot(t, gamma, axes=([a], [0]))
        out -= np.moveaxis(td, [r - 1, r], [a + 1, 0])
    return out


def covderiv_tensor_r0_at(spec: MetricSpec, T: TensorSource, X, p, fd_step: float = 1e-5) -> np.ndarray:
    """Components of ``nabla_X T`` for a fully covariant tensor field ``T``."""
    p = as_point(spec, p)
    x, _ = _field_values(X, spec, p)
    return np.tensordot(x, covariant_gradient_r0(spec, T, p, fd_step), axes=([0], [0]))
