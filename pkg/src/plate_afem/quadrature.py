"""Quadrature on the reference triangle and the unit interval.

The reference triangle is ``conv{(0,0), (1,0), (0,1)}`` with area 1/2.
Triangle rules are Stroud conical products (Gauss-Jacobi times
Gauss-Legendre), which exist for every degree and have positive weights.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_TRIANGLE_DEGREE = 30
MAX_EDGE_DEGREE = 30

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
REF_CENTROID = np.array([1.0 / 3.0, 1.0 / 3.0])


@dataclass(frozen=True)
class QuadRule:
    """Points and weights of a quadrature rule.

    For triangle rules ``points`` holds reference coordinates ``(x, y)``;
    for interval rules it is one-dimensional on ``[0, 1]``.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int

    @property
    def barycentric(self):
        """Barycentric coordinates of the points of a triangle rule."""
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - x - y, x, y])

    def __len__(self):
        return len(self.weights)


def _check_degree(d, top):
    if not (isinstance(d, (int, np.integer)) and 1 <= d <= top):
        raise ValueError(f"unsupported quadrature degree {d!r} (1..{top})")


@lru_cache(maxsize=None)
def quad_edge(d: int) -> QuadRule:
    """Gauss-Legendre rule on ``[0, 1]`` exact for polynomials of degree ``d``."""
    _check_degree(d, MAX_EDGE_DEGREE)
    n = max(1, (d + 2) // 2)
    t, w = np.polynomial.legendre.leggauss(n)
    return QuadRule(0.5 * (t + 1.0), 0.5 * w, d)


@lru_cache(maxsize=None)
def quad_triangle(d: int) -> QuadRule:
    """Conical product rule on the reference triangle, exact to degree ``d``."""
    _check_degree(d, MAX_TRIANGLE_DEGREE)
    n = max(1, (d + 2) // 2)
    tu, wu = roots_jacobi(n, 1.0, 0.0)
    tv, wv = np.polynomial.legendre.leggauss(n)
    u = 0.5 * (tu + 1.0)
    v = 0.5 * (tv + 1.0)
    # weight (1-t) = 2(1-u) absorbs the collapse Jacobian (1-u)
    wu = wu / 4.0
    wv = wv / 2.0
    U, V = np.meshgrid(u, v, indexing="ij")
    W = np.outer(wu, wv)
    pts = np.column_stack([U.ravel(), ((1.0 - U) * V).ravel()])
    return QuadRule(pts, W.ravel(), d)


def map_rule(rule, vertices):
    """Map a reference rule onto the triangle with the given 3x2 vertices.

    Returned weights integrate over that triangle (physical area).
    """
    P = np.asarray(vertices, dtype=float)
    B = np.column_stack([P[1] - P[0], P[2] - P[0]])
    pts = P[0] + rule.points @ B.T
    return pts, rule.weights * abs(np.linalg.det(B))


def _union(pieces, degree):
    pts = np.concatenate([p for p, _ in pieces])
    wts = np.concatenate([w for _, w in pieces])
    return QuadRule(pts, wts, degree)


def _hct_subtriangles():
    c = REF_CENTROID
    v = REF_VERTICES
    return [np.array([v[s], v[(s + 1) % 3], c]) for s in range(3)]


@lru_cache(maxsize=None)
def split_rule(d: int) -> QuadRule:
    """Union of degree-``d`` rules on the three centroid subtriangles.

    Exact for piecewise polynomials of degree ``d`` on the
    Hsieh-Clough-Tocher split, hence also for ordinary polynomials.
    """
    base = quad_triangle(d)
    return _union([map_rule(base, S) for S in _hct_subtriangles()], d)


def _graded_pieces(tri, base, levels):
    """Geometric subdivision of ``tri`` towards its first vertex."""
    pieces = []
    P, Q, R = tri
    for _ in range(levels):
        pq, pr, qr = 0.5 * (P + Q), 0.5 * (P + R), 0.5 * (Q + R)
        for child in ((pq, Q, qr), (pr, qr, R), (qr, pr, pq)):
            pieces.append(map_rule(base, np.array(child)))
        Q, R = pq, pr
    pieces.append(map_rule(base, np.array([P, Q, R])))
    return pieces


@lru_cache(maxsize=None)
def graded_split_rule(d: int, vertex: int, levels: int = 12) -> QuadRule:
    """Split rule refined geometrically towards reference vertex ``vertex``.

    Meant for integrands with an integrable point singularity at that
    vertex; still exact for split-piecewise polynomials of degree ``d``.
    """
    base = quad_triangle(d)
    sing = REF_VERTICES[vertex]
    pieces = []
    for S in _hct_subtriangles():
        hit = np.flatnonzero(np.all(np.isclose(S, sing), axis=1))
        if hit.size:
            k = hit[0]
            order = [k, (k + 1) % 3, (k + 2) % 3]
            pieces.extend(_graded_pieces(S[order], base, levels))
        else:
            pieces.append(map_rule(base, S))
    return _union(pieces, d)
