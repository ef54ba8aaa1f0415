"""Quadrature rules for segments, triangles and tetrahedra."""

from __future__ import annotations

import math

import numpy as np


def gauss_legendre_01(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on the unit interval [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(npts)
    return 0.5 * (x + 1.0), 0.5 * w


def composite_gauss(edges: np.ndarray, npts: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss rule on the intervals delimited by ``edges``.

    Returns flat arrays of points and weights; with ``npts=3`` the rule is
    exact for polynomials of degree 5 on each sub-interval.
    """
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre_01(npts)
    left = edges[:-1]
    length = np.diff(edges)
    points = (left[:, None] + length[:, None] * x[None, :]).ravel()
    weights = (length[:, None] * w[None, :]).ravel()
    return points, weights


def tet_rule_4pt() -> tuple[np.ndarray, np.ndarray]:
    """Classical 4-point rule on a tetrahedron, exact for degree 2.

    Returns barycentric coordinates (4, 4) and weights summing to 1; callers
    scale by the element volume.
    """
    a = (5.0 - math.sqrt(5.0)) / 20.0
    b = (5.0 + 3.0 * math.sqrt(5.0)) / 20.0
    bary = np.full((4, 4), a)
    np.fill_diagonal(bary, b)
    weights = np.full(4, 0.25)
    return bary, weights


def tet_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Tetrahedron rule exact for polynomials of the given total degree.

    Degrees up to 2 use the 4-point rule; higher degrees use a collapsed
    (Duffy) tensor-product Gauss rule, which stays exact because the map
    turns a degree-p polynomial into a polynomial of degree at most p+2
    per axis.
    """
    if degree <= 2:
        return tet_rule_4pt()
    q = (degree + 4) // 2  # 2q-1 >= degree+2
    x, w = gauss_legendre_01(q)
    u, v, t = (a.ravel() for a in np.meshgrid(x, x, x, indexing="ij"))
    wu, wv, wt = (a.ravel() for a in np.meshgrid(w, w, w, indexing="ij"))
    xs = u
    ys = v * (1.0 - u)
    zs = t * (1.0 - u) * (1.0 - v)
    jac = (1.0 - u) ** 2 * (1.0 - v)
    weights = wu * wv * wt * jac * 6.0  # reference volume 1/6, normalized to 1
    bary = np.column_stack([1.0 - xs - ys - zs, xs, ys, zs])
    return bary, weights


def tri_rule_midpoints() -> tuple[np.ndarray, np.ndarray]:
    """Edge-midpoint rule on a triangle, exact for degree 2 (weights sum to 1)."""
    bary = np.array(
        [
            [0.5, 0.5, 0.0],
            [0.0, 0.5, 0.5],
            [0.5, 0.0, 0.5],
        ]
    )
    weights = np.full(3, 1.0 / 3.0)
    return bary, weights
