"""Quadrature rules on the unit interval and on the reference triangle.

The reference triangle has vertices (0, 0), (1, 0), (0, 1); rule weights sum
to its area 1/2.
"""
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def gauss_interval(npoints):
    """Gauss-Legendre rule on [0, 1] (exact to degree 2*npoints - 1)."""
    x, w = np.polynomial.legendre.leggauss(npoints)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def collapsed_triangle_rule(degree):
    """Conical-product (Duffy) rule exact for polynomials of total `degree`.

    Returns ``(points, weights)`` with ``points`` of shape (n, 2).
    """
    n = max(1, int(np.ceil((degree + 2) / 2.0)))
    u, wu = gauss_interval(n)
    v, wv = gauss_interval(n)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    ww = np.outer(wu, wv) * (1.0 - uu)
    pts = np.column_stack([uu.ravel(), ((1.0 - uu) * vv).ravel()])
    return pts, ww.ravel()


# Symmetric 3-point interior rule, exact to degree 2.
THREE_POINT = (
    np.array([[1.0 / 6.0, 1.0 / 6.0], [2.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 2.0 / 3.0]]),
    np.full(3, 1.0 / 6.0),
)

CENTROID = (np.array([[1.0 / 3.0, 1.0 / 3.0]]), np.array([0.5]))
