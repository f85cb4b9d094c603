"""Benchmark problems: the Grisvard corner singularity and a single point load."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .forms import Problem, SourceTerm, apw_broken, jh_broken
from .integrate import cell_rule
from .mesh import make_lshape, uniform_refine
from .space import DiscreteFunction, p2_eval_local

OMEGA = 1.5 * np.pi
MU_PRINTED = 0.54448


def corner_exponent(omega=OMEGA, guess=MU_PRINTED):
    """Root of ``sin(z omega) = z |sin omega|`` near ``guess`` (clamped corner)."""
    s = abs(np.sin(omega))
    return brentq(lambda z: np.sin(z * omega) - z * s, guess - 0.05, guess + 0.05, xtol=1e-15)


@dataclass(frozen=True)
class GrisvardSolution:
    """``u = mu^2 (x^2-1)^2 (y^2-1)^2 r^(1+mu) xi(phi - pi/2)`` on the L-shape.

    The L-shape is ``(-1,1)^2`` minus ``[0,1)^2``.  The polar angle runs
    over ``(pi/2, 2 pi)``, so ``phi - pi/2`` sweeps the opening ``(0, omega)``
    of the reentrant corner at the origin.
    """

    mu: float = field(default_factory=corner_exponent)
    omega: float = OMEGA

    def _xi(self, t):
        a, b, w = self.mu - 1.0, self.mu + 1.0, self.omega
        A = np.sin(a * w) / a - np.sin(b * w) / b
        C = np.cos(a * w) - np.cos(b * w)
        ca, cb, sa, sb = np.cos(a * t), np.cos(b * t), np.sin(a * t), np.sin(b * t)
        xi = A * (ca - cb) - C * (sa / a - sb / b)
        d1 = A * (-a * sa + b * sb) - C * (ca - cb)
        d2 = A * (-a * a * ca + b * b * cb) - C * (-a * sa + b * sb)
        return xi, d1, d2

    def _polar(self, x):
        r = np.hypot(x[..., 0], x[..., 1])
        phi = np.arctan2(x[..., 1], x[..., 0])
        phi = np.where(phi < 0.5 * np.pi - 1e-14, phi + 2 * np.pi, phi)
        return r, phi

    def singular(self, x, order=0):
        """``s = r^(1+mu) xi`` and its Cartesian derivatives, ``x`` of shape (..., 2)."""
        x = np.asarray(x, dtype=float)
        r, phi = self._polar(x)
        xi, d1, d2 = self._xi(phi - 0.5 * np.pi)
        al = 1.0 + self.mu
        safe = np.where(r > 0, r, 1.0)
        er = np.stack([np.cos(phi), np.sin(phi)], axis=-1)
        ep = np.stack([-np.sin(phi), np.cos(phi)], axis=-1)
        if order == 0:
            return np.where(r > 0, safe ** al * xi, 0.0)
        if order == 1:
            g = safe[..., None] ** (al - 1) * (al * xi[..., None] * er + d1[..., None] * ep)
            return np.where(r[..., None] > 0, g, 0.0)
        rr = np.einsum("...i,...j->...ij", er, er)
        pp = np.einsum("...i,...j->...ij", ep, ep)
        rp = np.einsum("...i,...j->...ij", er, ep)
        H = (al * (al - 1) * xi)[..., None, None] * rr + (al * xi + d2)[..., None, None] * pp \
            + ((al - 1) * d1)[..., None, None] * (rp + np.swapaxes(rp, -1, -2))
        H = safe[..., None, None] ** (al - 2) * H
        return np.where(r[..., None, None] > 0, H, 0.0)

    def __call__(self, x, order=0):
        x = np.asarray(x, dtype=float)
        X, Y = x[..., 0], x[..., 1]
        p, q = (X * X - 1) ** 2, (Y * Y - 1) ** 2
        m2 = self.mu ** 2
        s = self.singular(x, 0)
        if order == 0:
            return m2 * p * q * s
        dp, dq = 4 * X * (X * X - 1), 4 * Y * (Y * Y - 1)
        gc = np.stack([dp * q, p * dq], axis=-1)
        gs = self.singular(x, 1)
        if order == 1:
            return m2 * (p * q)[..., None] * gs + m2 * s[..., None] * gc
        ddp, ddq = 12 * X * X - 4, 12 * Y * Y - 4
        Hc = np.empty(x.shape[:-1] + (2, 2))
        Hc[..., 0, 0] = ddp * q
        Hc[..., 1, 1] = p * ddq
        Hc[..., 0, 1] = Hc[..., 1, 0] = dp * dq
        Hs = self.singular(x, 2)
        cross = np.einsum("...i,...j->...ij", gc, gs)
        return m2 * ((p * q)[..., None, None] * Hs + cross + np.swapaxes(cross, -1, -2)
                     + s[..., None, None] * Hc)

    def grisvard_field(self, p, order=0):
        return self(p, order)

    def eval(self, tri, x, order):
        """Field protocol used by the interpolation and trilinear helpers."""
        return self(x, order)

    def laplacian(self, x):
        H = self(x, 2)
        return H[..., 0, 0] + H[..., 1, 1]


def grisvard_field(p, order=0):
    """Evaluate the Grisvard solution (order 0, 1, 2) at points ``p``."""
    return GrisvardSolution()(p, order)


@dataclass
class Benchmark:
    """A benchmark problem with its initial mesh and an optional exact solution."""

    name: str
    problem: Problem
    mesh0: object
    exact: object = None


def nse_grisvard_problem(sol: GrisvardSolution | None = None):
    """Stream-function NSE with the Grisvard solution as exact solution.

    The load is in divergence form, ``f1 = Lap(u) Curl(u)`` and
    ``f2 = D^2 u``, so that ``F(phi) = a(u, phi) + Gamma(u, u, phi)``.
    """
    sol = sol or GrisvardSolution()

    def f1(x):
        g = sol(x, 1)
        lap = sol.laplacian(x)
        return lap[..., None] * np.stack([g[..., 1], -g[..., 0]], axis=-1)

    def f2(x):
        return sol(x, 2)

    F = SourceTerm(f1=f1, f2=f2, k=1, degree=8, singular=(0.0, 0.0))
    return Benchmark("nse-grisvard", Problem("nse", F), make_lshape(), sol)


ZETA = (-1.0 / 6.0, -1.0 / 6.0)


def vke_pointload_problem(zeta=ZETA, lam=1.0):
    """Von Karman plate with a unit point load at the centroid of the L-shape."""
    F = SourceTerm(point_loads=[(tuple(zeta), float(lam))], k=0)
    return Benchmark("vke-pointload", Problem("vke", F), make_lshape(), None)


def biharmonic_problem(f0=1.0, mesh0=None):
    """Clamped plate ``Lap^2 u = f0`` with constant load."""
    F = SourceTerm(f0=lambda x: np.full(x.shape[:-1], float(f0)), k=0, degree=2)
    return Benchmark("biharmonic-custom", Problem("biharmonic", F),
                     mesh0 if mesh0 is not None else make_lshape(), None)


def error_h(exact, u, degree=8, singular=(0.0, 0.0)):
    """``||u_exact - u_h||_h`` for one DiscreteFunction or a pair.

    ``exact`` is a callable ``exact(x, order)`` (or a sequence of them for a
    pair).  Only ``u_h`` contributes to the jump part.
    """
    parts = u if isinstance(u, (tuple, list)) else (u,)
    exacts = exact if isinstance(exact, (tuple, list)) else (exact,) * len(parts)
    total = 0.0
    for v, ex in zip(parts, exacts):
        mesh = v.mesh
        rule = cell_rule(mesh, degree, singular)
        U = v.broken()
        for g, (tris, r) in enumerate(rule.groups):
            X, W = rule.physical(mesh, g)
            nq = len(r)
            tri = np.repeat(tris, nq)
            xh = np.tile(r.points, (len(tris), 1))
            Hh = p2_eval_local(mesh, U, tri, xh, 2).reshape(len(tris), nq, 2, 2)
            He = np.asarray(ex(X, 2))
            total += float(np.sum(W * np.sum((He - Hh) ** 2, axis=(-1, -2))))
        b = v.dofs.B @ v.coeffs
        total += float(b @ (jh_broken(mesh) @ b))
    return float(np.sqrt(max(total, 0.0)))


def uniform_meshes(mesh0, levels):
    """``levels`` meshes starting at ``mesh0`` with one uniform bisection step each."""
    meshes = [mesh0]
    for _ in range(levels - 1):
        meshes.append(uniform_refine(meshes[-1]))
    return meshes


__all__ = [
    "OMEGA", "MU_PRINTED", "ZETA", "corner_exponent", "GrisvardSolution", "grisvard_field",
    "Benchmark", "nse_grisvard_problem", "vke_pointload_problem", "biharmonic_problem",
    "error_h", "uniform_meshes", "DiscreteFunction", "apw_broken",
]
