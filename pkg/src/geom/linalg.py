"""Dense symmetric-matrix algebra for scalar products at a single point."""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateMetric

DEFAULT_TOL = 1e-10


def symmetrize(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def jacobi_eigh(a, eps: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps until the off-diagonal Frobenius norm is at most ``eps`` times the
    matrix norm. Returns ``(eigenvalues, V)`` with eigenvectors as the columns
    of ``V``, in the order the diagonal ends up (no sorting).
    """
    a = symmetrize(a).copy()
    n = a.shape[0]
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    mask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = math.sqrt(float(np.sum(a[mask] ** 2)))
        if off <= eps * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = float(a[p, q])
                if apq == 0.0:
                    continue
                theta = float(a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    return np.diag(a).copy(), v


def invert_sym(g, tol: float = DEFAULT_TOL) -> np.ndarray:
    g = symmetrize(g)
    det = np.linalg.det(g)
    if abs(det) <= tol:
        raise DegenerateMetric(f"|det g| = {abs(det):.3e} <= {tol:g}")
    return symmetrize(np.linalg.inv(g))


def index_of(g, tol: float = DEFAULT_TOL) -> int:
    """Number of negative directions of the scalar product ``g``."""
    eig, _ = jacobi_eigh(g)
    if np.any(np.abs(eig) <= tol):
        raise DegenerateMetric(f"eigenvalue within {tol:g} of zero: {eig.tolist()}")
    return int(np.sum(eig < 0))


def orthonormal_basis(g, tol: float = DEFAULT_TOL) -> tuple[np.ndarray, np.ndarray]:
    """Basis ``B`` (columns) with ``B.T @ g @ B == diag(eps)``, negative signs first."""
    eig, v = jacobi_eigh(g)
    if np.any(np.abs(eig) <= tol):
        raise DegenerateMetric(f"eigenvalue within {tol:g} of zero: {eig.tolist()}")
    order = sorted(range(len(eig)), key=lambda i: (eig[i] > 0, i))
    eig = eig[order]
    b = v[:, order] / np.sqrt(np.abs(eig))
    return b, np.sign(eig)


def flat_components(g, v) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    v = np.asarray(v, dtype=float)
    if g.shape[-1] != v.shape[-1]:
        raise ValueError(f"dimension mismatch: {g.shape} vs {v.shape}")
    return np.einsum("...ij,...i->...j", g, v)


def sharp_components(g_inv, omega) -> np.ndarray:
    g_inv = np.asarray(g_inv, dtype=float)
    omega = np.asarray(omega, dtype=float)
    if g_inv.shape[-1] != omega.shape[-1]:
        raise ValueError(f"dimension mismatch: {g_inv.shape} vs {omega.shape}")
    return np.einsum("...ji,...i->...j", g_inv, omega)
