"""Test function with a point value and many orthogonalities on an edge patch.

Given a point ``zeta`` inside an interior edge ``E`` the function ``psi``
satisfies ``psi(zeta) = 1``, vanishes with its gradient outside the two
triangles at ``E``, and is L2-orthogonal to ``P_k`` on both triangles,
along ``E`` and (with its gradient) along ``E``.

The building block is ``w(X, Y) p((X + Y) / 2)`` on a square whose
diagonal lies on ``E`` with ``w = (1-X^2)^2 (1-Y^2)^2`` and ``p`` a
normalised Jacobi polynomial ``P_{2n}^{(4,4)}``.  Squared cubic bubbles
then restore the orthogonality on the triangles.
"""
from dataclasses import dataclass
from math import comb, floor

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import polynomial as npp

from .quadrature import quad_edge, quad_triangle


class SeparationError(ValueError):
    """The point is too close to a vertex for the construction."""


def jacobi(n, alpha, beta):
    """``P_n^{(alpha, beta)}`` as a power-basis polynomial (three-term recurrence)."""
    p0 = Polynomial([1.0])
    if n == 0:
        return p0
    p1 = Polynomial([0.5 * (alpha - beta), 0.5 * (alpha + beta + 2)])
    x = Polynomial([0.0, 1.0])
    ab = alpha + beta
    for m in range(2, n + 1):
        a = 2 * m * (m + ab) * (2 * m + ab - 2)
        b = (2 * m + ab - 1) * ((2 * m + ab) * (2 * m + ab - 2) * x + alpha ** 2 - beta ** 2)
        c = 2 * (m + alpha - 1) * (m + beta - 1) * (2 * m + ab)
        p0, p1 = p1, (b * p1 - c * p0) / a
    return p1


def jacobi_center_value(n):
    """``c_n = P_{2n}^{(4,4)}(0) = (-4)^{-n} binom(2n + 4, n)``."""
    return (-4.0) ** (-n) * comb(2 * n + 4, n)


def psi_degree(k):
    """Smallest ``n >= 1`` with ``2n > k``, so that ``rho P_{2n}`` is orthogonal to ``P_k``."""
    return floor(k / 2) + 1


def _square_coefficients(n):
    """Coefficients ``C[i, j]`` of ``X^i Y^j`` for ``w(X, Y) p((X+Y)/2)``."""
    p = jacobi(2 * n, 4, 4) / jacobi_center_value(n)
    wx = npp.polypow([1.0, 0.0, -1.0], 2)
    W = np.outer(wx, wx)
    # p((X+Y)/2) = sum_m a_m 2^-m sum_i binom(m, i) X^i Y^(m-i)
    d = 2 * n
    P = np.zeros((d + 1, d + 1))
    for m, a in enumerate(p.coef):
        for i in range(m + 1):
            P[i, m - i] += a * 0.5 ** m * comb(m, i)
    out = np.zeros((W.shape[0] + d, W.shape[1] + d))
    for i in range(d + 1):
        for j in range(d + 1):
            if P[i, j]:
                out[i:i + W.shape[0], j:j + W.shape[1]] += P[i, j] * W
    return out


def _dpow(e, p):
    return e * p ** (e - 1) if e > 0 else np.zeros_like(p)


def _d2pow(e, p):
    return e * (e - 1) * p ** (e - 2) if e > 1 else np.zeros_like(p)


def _scaled_monomials(k):
    return [(a, b) for s in range(k + 1) for a in range(s, -1, -1) for b in [s - a]]


@dataclass(frozen=True, eq=False)
class PsiFunction:
    """Evaluable ``psi`` on the patch of one edge.

    Attributes
    ----------
    mesh, edge, zeta, k, n : construction data
    delta : half diagonal of the square (its vertices on ``E`` are ``zeta +- delta tau``)
    tris : the two triangles ``(T+, T-)`` at the edge
    q : bubble coefficients per triangle, shape (2, nmon)
    """

    mesh: object
    edge: int
    zeta: np.ndarray
    k: int
    n: int
    delta: float
    tau: np.ndarray
    nu: np.ndarray
    tris: np.ndarray
    C: np.ndarray
    q: np.ndarray

    # -- pieces ---------------------------------------------------------
    def _square(self, x, order):
        """``g`` and derivatives at physical points (m, 2)."""
        d = x - self.zeta
        s, t = d @ self.tau, d @ self.nu
        X, Y = (s + t) / self.delta, (s - t) / self.delta
        inside = (np.abs(X) <= 1.0) & (np.abs(Y) <= 1.0)
        Jm = np.stack([(self.tau + self.nu), (self.tau - self.nu)]) / self.delta  # d(X,Y)/dx
        if order == 0:
            return np.where(inside, npp.polyval2d(X, Y, self.C), 0.0)
        CX, CY = npp.polyder(self.C, axis=0), npp.polyder(self.C, axis=1)
        if order == 1:
            gXY = np.stack([npp.polyval2d(X, Y, CX), npp.polyval2d(X, Y, CY)], axis=-1)
            return np.where(inside[:, None], gXY @ Jm, 0.0)
        HXY = np.empty(X.shape + (2, 2))
        HXY[:, 0, 0] = npp.polyval2d(X, Y, npp.polyder(CX, axis=0))
        HXY[:, 1, 1] = npp.polyval2d(X, Y, npp.polyder(CY, axis=1))
        HXY[:, 0, 1] = HXY[:, 1, 0] = npp.polyval2d(X, Y, npp.polyder(CX, axis=1))
        H = np.einsum("ai,nab,bj->nij", Jm, HXY, Jm)
        return np.where(inside[:, None, None], H, 0.0)

    def _bubble_basis(self, side, x, order):
        """``b_T^2 m_a`` for scaled monomials ``m_a``: (m, nmon[, 2[, 2]])."""
        T = self.tris[side]
        V = self.mesh.vertices[self.mesh.triangles[T]]
        Bm = np.column_stack([V[1] - V[0], V[2] - V[0]])
        G = np.linalg.inv(Bm)  # rows: gradients of lambda_1, lambda_2
        gl = np.vstack([-G.sum(axis=0), G])  # (3, 2) gradients of barycentrics
        lam12 = (x - V[0]) @ G.T
        lam = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
        b = 27.0 * lam.prod(axis=1)
        gb = 27.0 * (lam[:, [1]] * lam[:, [2]] * gl[0] + lam[:, [0]] * lam[:, [2]] * gl[1]
                     + lam[:, [0]] * lam[:, [1]] * gl[2])
        Hb = np.zeros((len(x), 2, 2))
        for i, j, m in ((0, 1, 2), (0, 2, 1), (1, 2, 0)):
            S = np.outer(gl[i], gl[j]) + np.outer(gl[j], gl[i])
            Hb += 27.0 * lam[:, m, None, None] * S
        B, gB = b * b, 2 * b[:, None] * gb
        HB = 2 * np.einsum("ni,nj->nij", gb, gb) + 2 * b[:, None, None] * Hb
        xc, h = V.mean(axis=0), self.mesh.diameters[T]
        xi = (x - xc) / h
        mons = _scaled_monomials(self.k)
        val = np.stack([xi[:, 0] ** a * xi[:, 1] ** c for a, c in mons], axis=1)
        if order == 0:
            return B[:, None] * val
        gm = np.stack([np.stack([_dpow(a, xi[:, 0]) * xi[:, 1] ** c,
                                 xi[:, 0] ** a * _dpow(c, xi[:, 1])], axis=-1) / h
                       for a, c in mons], axis=1)
        if order == 1:
            return gB[:, None, :] * val[..., None] + B[:, None, None] * gm
        Hm = np.zeros((len(x), len(mons), 2, 2))
        for idx, (a, c) in enumerate(mons):
            Hm[:, idx, 0, 0] = _d2pow(a, xi[:, 0]) * xi[:, 1] ** c
            Hm[:, idx, 1, 1] = xi[:, 0] ** a * _d2pow(c, xi[:, 1])
            Hm[:, idx, 0, 1] = Hm[:, idx, 1, 0] = _dpow(a, xi[:, 0]) * _dpow(c, xi[:, 1])
        Hm /= h * h
        cross = np.einsum("ni,nmj->nmij", gB, gm)
        return (HB[:, None] * val[..., None, None] + cross + np.swapaxes(cross, -1, -2)
                + B[:, None, None, None] * Hm)

    # -- public -----------------------------------------------------------
    def evaluate(self, side, x, order=0):
        """``psi`` (order 0), gradient or Hessian on triangle ``tris[side]``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = self._square(x, order)
        corr = np.tensordot(self._bubble_basis(side, x, order), self.q[side], axes=([1], [0]))
        return g - corr

    def __call__(self, x, order=0):
        """Evaluate at points (m, 2) anywhere in the plane (zero off the patch)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.zeros((len(x),) + (2,) * order)
        for side in range(2):
            lam = _barycentric(self.mesh, self.tris[side], x)
            inside = lam.min(axis=1) >= -1e-12
            if inside.any():
                out[inside] = self.evaluate(side, x[inside], order)
        return out

    def pieces(self, side):
        """Triangles (m, 3, 2) partitioning ``tris[side]`` into polynomial pieces."""
        T = self.tris[side]
        tri = self.mesh.triangles[T]
        P, Q = self.mesh.vertices[self.mesh.edges[self.edge]]
        R = self.mesh.vertices[[v for v in tri if v not in self.mesh.edges[self.edge]][0]]
        sgn = np.sign((R - self.zeta) @ self.nu)
        c = self.zeta + sgn * self.delta * self.nu
        a = self.zeta - self.delta * self.tau
        b = self.zeta + self.delta * self.tau
        if (a - P) @ self.tau < 0:
            a, b = b, a
        return np.array([[a, b, c], [P, a, c], [b, Q, c], [P, c, R], [c, Q, R]])

    def triangle_rule(self, side, degree):
        """Points and weights exact for ``psi``-polynomials of ``degree`` on ``tris[side]``."""
        rule = quad_triangle(degree)
        X, W = [], []
        for V in self.pieces(side):
            Bm = np.column_stack([V[1] - V[0], V[2] - V[0]])
            area2 = abs(np.linalg.det(Bm))
            if area2 <= 1e-14 * self.mesh.edge_lengths[self.edge] ** 2:
                continue  # the square touches a vertex or a side
            X.append(V[0] + rule.points @ Bm.T)
            W.append(area2 * rule.weights)
        return np.concatenate(X), np.concatenate(W)

    def edge_rule(self, degree):
        """Points, weights and arc parameter on ``E`` split at the square corners."""
        P, Q = self.mesh.vertices[self.mesh.edges[self.edge]]
        L = np.linalg.norm(Q - P)
        sa = (self.zeta - P) @ self.tau - self.delta
        sb = sa + 2 * self.delta
        rule = quad_edge(degree)
        X, W = [], []
        for lo, hi in ((0.0, sa), (sa, sb), (sb, L)):
            s = lo + (hi - lo) * rule.points
            X.append(P + s[:, None] * self.tau)
            W.append((hi - lo) * rule.weights)
        return np.concatenate(X), np.concatenate(W)

    @property
    def poly_degree(self):
        return 8 + 2 * self.n

    def h2_seminorm(self):
        total = 0.0
        d = 2 * self.poly_degree
        for side in range(2):
            X, W = self.triangle_rule(side, d)
            H = self.evaluate(side, X, 2)
            total += float(W @ np.sum(H * H, axis=(1, 2)))
        return np.sqrt(total)

    def orthogonality_residuals(self):
        """Largest moments against scaled monomials of degree ``<= k``.

        Returns a dict with keys ``triangle``, ``edge`` and ``edge_gradient``.
        """
        d = self.poly_degree + self.k
        res = {}
        tri_m = 0.0
        for side in range(2):
            X, W = self.triangle_rule(side, d)
            T = self.tris[side]
            xc = self.mesh.vertices[self.mesh.triangles[T]].mean(axis=0)
            xi = (X - xc) / self.mesh.diameters[T]
            v = self.evaluate(side, X, 0)
            for a, c in _scaled_monomials(self.k):
                tri_m = max(tri_m, abs(float(W @ (v * xi[:, 0] ** a * xi[:, 1] ** c))))
        res["triangle"] = tri_m
        X, W = self.edge_rule(d)
        P = self.mesh.vertices[self.mesh.edges[self.edge, 0]]
        L = self.mesh.edge_lengths[self.edge]
        s = ((X - P) @ self.tau) / L
        v = self(X, 0)
        g = self(X, 1)
        em = gm = 0.0
        for j in range(self.k + 1):
            em = max(em, abs(float(W @ (v * s ** j))))
            gm = max(gm, float(np.abs(W @ (g * (s ** j)[:, None])).max()))
        res["edge"] = em
        res["edge_gradient"] = gm
        return res


def _barycentric(mesh, T, x):
    V = mesh.vertices[mesh.triangles[T]]
    Bm = np.column_stack([V[1] - V[0], V[2] - V[0]])
    l12 = np.linalg.solve(Bm, (x - V[0]).T).T
    return np.column_stack([1.0 - l12.sum(axis=1), l12])


def _ray_exit(V, z, d):
    """Largest ``t >= 0`` with ``z + t d`` in the triangle ``V`` (3, 2)."""
    tmax = np.inf
    for i in range(3):
        a, b = V[i], V[(i + 1) % 3]
        e = b - a
        n = np.array([e[1], -e[0]])
        n = n if (V[(i + 2) % 3] - a) @ n < 0 else -n  # outward
        den = d @ n
        if den > 1e-15:
            tmax = min(tmax, ((a - z) @ n) / den)
    return tmax


def build_psi(mesh, edge, zeta, k, min_ratio=0.05):
    """Construct ``psi`` for the point ``zeta`` inside the interior edge ``edge``.

    Raises :class:`SeparationError` when ``zeta`` is not inside the edge or
    the square (relative to ``h_E``) would be smaller than ``min_ratio``.
    """
    if not mesh.interior_edges[edge]:
        raise ValueError("edge must be an interior edge")
    zeta = np.asarray(zeta, dtype=float)
    P, Q = mesh.vertices[mesh.edges[edge]]
    L = mesh.edge_lengths[edge]
    tau = (Q - P) / L
    nu = np.array([tau[1], -tau[0]])
    s = (zeta - P) @ tau
    if abs((zeta - P) @ nu) > 1e-12 * L or not (0.0 < s < L):
        raise SeparationError("zeta must lie in the interior of the edge")
    tris = np.array(mesh.edge_tris[edge])
    reach = [s, L - s]
    for T in tris:
        V = mesh.vertices[mesh.triangles[T]]
        R = V[[i for i, v in enumerate(mesh.triangles[T]) if v not in mesh.edges[edge]][0]]
        sgn = np.sign((R - zeta) @ nu)
        reach.append(_ray_exit(V, zeta, sgn * nu))
    delta = float(min(reach))
    if delta < min_ratio * L:
        raise SeparationError(
            f"separation violated: square half-diagonal {delta:.3e} < {min_ratio} h_E")
    n = psi_degree(k)
    C = _square_coefficients(n)
    nm = len(_scaled_monomials(k))
    psi = PsiFunction(mesh, edge, zeta, k, n, delta, tau, nu, tris, C, np.zeros((2, nm)))
    q = np.zeros((2, nm))
    d = psi.poly_degree + k + 6 + k
    for side in range(2):
        X, W = psi.triangle_rule(side, d)
        T = tris[side]
        xc = mesh.vertices[mesh.triangles[T]].mean(axis=0)
        xi = (X - xc) / mesh.diameters[T]
        mons = np.stack([xi[:, 0] ** a * xi[:, 1] ** c for a, c in _scaled_monomials(k)], axis=1)
        Bq = psi._bubble_basis(side, X, 0)  # b^2 m_a
        M = np.einsum("n,na,nb->ab", W, mons, Bq)
        rhs = np.einsum("n,na,n->a", W, mons, psi._square(X, 0))
        q[side] = np.linalg.solve(M, rhs)
    return PsiFunction(mesh, edge, zeta, k, n, delta, tau, nu, tris, C, q)


__all__ = ["SeparationError", "jacobi", "jacobi_center_value", "psi_degree", "PsiFunction",
           "build_psi"]
