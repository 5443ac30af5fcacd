"""Quadrature rules on reference simplices.

Rules are built as conical products of Gauss--Jacobi lines (collapsed
coordinates), so a rule requested for polynomial degree ``p`` is exact for
all monomials of total degree <= p, with strictly positive weights.  The
reference cells are

    segment:     {0 <= t <= 1}
    triangle:    {x, y >= 0, x + y <= 1}
    tetrahedron: {x, y, z >= 0, x + y + z <= 1}

and weights sum to the reference measure (1, 1/2, 1/6 respectively).
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class QuadratureRule:
    """Points (nq, dim) and positive weights (nq,) on a reference simplex."""

    dim: int
    degree: int
    points: np.ndarray
    weights: np.ndarray

    @property
    def npoints(self):
        return self.weights.shape[0]


def _gauss_jacobi_01(n, alpha):
    """Nodes/weights on [0, 1] for the weight (1 - t)^alpha."""
    x, w = roots_jacobi(n, alpha, 0.0)
    t = 0.5 * (x + 1.0)
    w = w * 0.5 ** (alpha + 1.0)
    return t, w


def simplex_rule(dim: int, degree: int) -> QuadratureRule:
    """Conical-product rule on the reference simplex, exact to ``degree``."""
    if dim not in (1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim}")
    if degree < 0:
        raise ValueError("quadrature degree must be nonnegative")
    n = max(1, (degree + 2) // 2)  # 2n - 1 >= degree

    if dim == 1:
        a, wa = _gauss_jacobi_01(n, 0.0)
        return QuadratureRule(1, 2 * n - 1, a[:, None].copy(), wa.copy())

    if dim == 2:
        a, wa = _gauss_jacobi_01(n, 0.0)
        b, wb = _gauss_jacobi_01(n, 1.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        x = (A * (1.0 - B)).ravel()
        y = B.ravel()
        w = np.outer(wa, wb).ravel()
        return QuadratureRule(2, 2 * n - 1, np.column_stack([x, y]), w)

    a, wa = _gauss_jacobi_01(n, 0.0)
    b, wb = _gauss_jacobi_01(n, 1.0)
    c, wc = _gauss_jacobi_01(n, 2.0)
    A, B, C = np.meshgrid(a, b, c, indexing="ij")
    x = (A * (1.0 - B) * (1.0 - C)).ravel()
    y = (B * (1.0 - C)).ravel()
    z = C.ravel()
    w = (wa[:, None, None] * wb[None, :, None] * wc[None, None, :]).ravel()
    return QuadratureRule(3, 2 * n - 1, np.column_stack([x, y, z]), w)


def reference_simplex_measure(dim: int) -> float:
    return 1.0 / math.factorial(dim)


def facet_rule(cell_dim: int, degree: int) -> QuadratureRule:
    """Rule on the reference facet (segment for 2D cells, triangle for 3D)."""
    return simplex_rule(cell_dim - 1, degree)
