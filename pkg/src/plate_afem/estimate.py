"""Explicit residual-based error estimators, data oscillations and jump terms.

All indicators are per triangle.  Contributions of an interior edge are
split in halves between its two triangles, each half weighted with the
area power of its own triangle, so that ``sigma^2 = sum_T sigma^2(T)``
counts every edge once.
"""
import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .forms import _VERTEX_RULE, _traces, curl, jh_broken, vk_bracket
from .integrate import cell_rule
from .psi import PsiFunction, SeparationError, build_psi
from .quadrature import quad_edge, quad_triangle
from .space import DiscreteFunction, SchemeConfig, p2_eval_local, p2_hessians
from .transfer import PiecewisePoly, l2_project

COMPONENTS = (
    "volume",
    "normal_jump",
    "hessian_normal_jump",
    "tangential_jump",
    "penalty_mean",
    "penalty_vertex",
    "point_load",
)

_EDGE_DEGREE = 6


class SeparationWarning(UserWarning):
    """A point load is closer to a vertex than the separation threshold."""


@dataclass
class EstimatorReport:
    """Per-triangle estimator contributions.

    ``components`` maps each name of :data:`COMPONENTS` to an array of
    per-triangle squared contributions; ``osc2`` holds the squared data
    oscillations.  ``error`` may be set to the exact error to obtain the
    efficiency index.
    """

    components: dict
    osc2: np.ndarray
    warnings: list = field(default_factory=list)
    error: float | None = None

    @property
    def n_triangles(self):
        return len(self.osc2)

    @property
    def sigma2(self):
        """``sigma^2(T)`` per triangle."""
        return sum(self.components[name] for name in COMPONENTS)

    @property
    def sigma(self):
        return float(np.sqrt(self.sigma2.sum()))

    @property
    def osc(self):
        return float(np.sqrt(self.osc2.sum()))

    @property
    def ef(self):
        if self.error is None or self.error == 0:
            return float("nan")
        return self.sigma / self.error

    def to_csv(self, path):
        """One row per triangle with all components, ``sigma2`` and ``osc2``."""
        s2 = self.sigma2
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["triangle", *COMPONENTS, "sigma2", "osc2"])
            for t in range(self.n_triangles):
                w.writerow([t, *(f"{self.components[c][t]:.12e}" for c in COMPONENTS),
                            f"{s2[t]:.12e}", f"{self.osc2[t]:.12e}"])


# ----------------------------------------------------------------------
# data projections and oscillations


def _zero_vector_poly(mesh, k, shape):
    nb = 1 if k == 0 else 3
    return PiecewisePoly(mesh, k, np.zeros((mesh.n_triangles, nb) + shape))


def project_source(mesh, F, k=None):
    """``(Pi_k f0, Pi_k f1, Pi_k f2)`` as piecewise polynomials (zeros for absent data)."""
    k = F.k if k is None else k
    rule = cell_rule(mesh, F.degree, F.singular)
    out = []
    for f, shape in ((F.f0, ()), (F.f1, (2,)), (F.f2, (2, 2))):
        out.append(_zero_vector_poly(mesh, k, shape) if f is None else l2_project(mesh, f, k, rule))
    return tuple(out)


def oscillation(F, mesh, k=None, projections=None):
    """Squared oscillations per triangle.

    ``osc^2(T) = ||h^2 (f0 - Pi f0)||^2 + ||h (f1 - Pi f1)||^2 + ||f2 - Pi f2||^2``
    on ``T`` with ``h = |T|^{1/2}``.  Returns ``(osc2_per_triangle, total)``.
    """
    k = F.k if k is None else k
    osc2 = np.zeros(mesh.n_triangles)
    if F.has_volume:
        P = projections or project_source(mesh, F, k)
        rule = cell_rule(mesh, F.degree, F.singular)
        weight = (mesh.areas ** 2, mesh.areas, np.ones(mesh.n_triangles))
        for g, (tris, _) in enumerate(rule.groups):
            X, W = rule.physical(mesh, g)
            for f, Pf, wt in zip((F.f0, F.f1, F.f2), P, weight):
                if f is None:
                    continue
                d = np.asarray(f(X)) - Pf(tris[:, None], X)
                d2 = d * d if d.ndim == 2 else np.sum(d * d, axis=tuple(range(2, d.ndim)))
                osc2[tris] += wt[tris] * np.sum(W * d2, axis=1)
    return osc2, float(np.sqrt(osc2.sum()))


# ----------------------------------------------------------------------
# point loads


@dataclass
class PointLoadIndicator:
    """``mu(zeta, T) = |lambda| |T|^{1/2}`` on the triangles containing ``zeta``.

    ``mu2`` holds the per-triangle sum of ``mu(zeta, T)^2`` over all loads,
    ``mu_zeta`` the values ``|lambda| h_zeta`` per load.
    """

    mu2: np.ndarray
    mu_zeta: list
    warnings: list

    @property
    def mu(self):
        return np.sqrt(self.mu2)


def point_load_indicator(loads, mesh, threshold=0.25):
    """Single-force indicators with a separation check.

    Loads at vertices contribute nothing.  A load closer than
    ``threshold * h_zeta`` to a vertex triggers a warning (returned in the
    ``warnings`` list and emitted as :class:`SeparationWarning`).
    """
    mu2 = np.zeros(mesh.n_triangles)
    mu_zeta, msgs = [], []
    for zeta, lam in loads:
        zeta = np.asarray(zeta, dtype=float)
        tris = mesh.locate(zeta)
        if tris.size == 0:
            raise ValueError(f"point load at {zeta} lies outside the domain")
        h_zeta = float(np.sqrt(mesh.areas[tris]).min())
        dist = float(np.linalg.norm(mesh.vertices - zeta, axis=1).min())
        if dist <= 1e-12 * h_zeta:
            mu_zeta.append(0.0)
            continue
        if dist < threshold * h_zeta:
            msg = (f"separation violated for the load at {tuple(zeta)}: "
                   f"dist = {dist:.3e} < {threshold} h_zeta = {threshold * h_zeta:.3e}")
            msgs.append(msg)
            warnings.warn(msg, SeparationWarning, stacklevel=2)
        mu2[tris] += (abs(lam) ** 2) * mesh.areas[tris]
        mu_zeta.append(abs(lam) * h_zeta)
    return PointLoadIndicator(mu2, mu_zeta, msgs)


# ----------------------------------------------------------------------
# edge machinery


def _edge_split(mesh, tr, per_edge, alpha, interior_only):
    """Distribute per-edge values to triangles with weights ``|T|^alpha``."""
    out = np.zeros(mesh.n_triangles)
    inner = tr.interior
    t0, t1 = mesh.edge_tris[:, 0], mesh.edge_tris[:, 1]
    w0 = mesh.areas[t0] ** alpha
    half = np.where(inner, 0.5, 1.0)
    val0 = half * w0 * per_edge
    if interior_only:
        val0 = np.where(inner, val0, 0.0)
    np.add.at(out, t0, val0)
    i = np.flatnonzero(inner)
    np.add.at(out, t1[i], 0.5 * mesh.areas[t1[i]] ** alpha * per_edge[i])
    return out


def _side_coeffs(tr, U):
    """Broken nodal values on both sides of each edge: (2, ne, 6), zero off the domain."""
    C = np.stack([U[tr.tri[:, 0]], U[tr.tri[:, 1]]])
    C[1, ~tr.interior] = 0.0
    return C


def _side_poly(tr, P, shape):
    """Values of a piecewise polynomial on both sides at the edge points."""
    ne, nq = tr.x.shape[:2]
    out = np.zeros((2, ne, nq) + shape)
    if P is None:
        return out
    for s in range(2):
        out[s] = P(np.repeat(tr.tri[:, s:s + 1], nq, axis=1), tr.x)
    out[1, ~tr.interior] = 0.0
    return out


def _side_const(tr, arr):
    """Per-triangle constants on both sides: (2, ne, ...)."""
    out = np.stack([arr[tr.tri[:, 0]], arr[tr.tri[:, 1]]])
    out[1, ~tr.interior] = 0.0
    return out


def _jump_terms(mesh, U, scheme, P1=None, P2=None, gamma1=False):
    """Edge-based indicator parts of one component with broken values ``U``."""
    tr = _traces(mesh, quad_edge(_EDGE_DEGREE))
    h = mesh.edge_lengths
    nu, tau = mesh.normals, mesh.tangents
    C = _side_coeffs(tr, U)
    H = np.einsum("seaij,sea->seij", tr.hess, C)  # (2, ne, 2, 2)
    G = np.einsum("seqai,sea->seqi", tr.grad, C)  # (2, ne, nq, 2)
    j = {}

    # f-jump residual [Pi f1 - Lap u Curl u - div Pi f2 - d_s(Pi f2 tau)] . nu
    vec = _side_poly(tr, P1, (2,))
    if gamma1:
        lap = H[..., 0, 0] + H[..., 1, 1]
        vec = vec - lap[:, :, None, None] * curl(G)
    if P2 is not None:
        D = _side_const(tr, P2.gradient_coef())  # (2, ne, 2, 2, 2) [i, j, d/dx_k]
        div = np.einsum("seijj->sei", D)
        ds = np.einsum("seijk,ej,ek->sei", D, tau, tau)
        vec = vec - (div + ds)[:, :, None, :]
    r = np.einsum("eqi,ei->eq", vec[0] - vec[1], nu)
    j["normal_jump"] = _edge_split(mesh, tr, h * ((r * r) @ tr.w), 1.5, True)

    # normal-normal Hessian jump, with the edge mean removed unless vartheta = 0
    M = _side_poly(tr, P2, (2, 2)) - H[:, :, None]
    q = np.einsum("eqij,ei,ej->eq", M[0] - M[1], nu, nu)
    if scheme.vartheta:
        q = q - (q @ tr.w)[:, None]
    j["hessian_normal_jump"] = _edge_split(mesh, tr, h * ((q * q) @ tr.w), 0.5, True)

    # tangential Hessian jump on all edges
    t = np.einsum("eij,ej->ei", H[0] - H[1], tau)
    j["tangential_jump"] = _edge_split(mesh, tr, h * np.sum(t * t, axis=1), 0.5, False)

    # penalty terms
    dn = np.einsum("eqi,ei->eq", G[0] - G[1], nu)
    mean = dn @ tr.w
    j["penalty_mean"] = _edge_split(mesh, tr, mean * mean, 0.0, False)
    trv = _traces(mesh, _VERTEX_RULE)
    Cv = _side_coeffs(trv, U)
    vz = np.einsum("sequ,seu->seq", trv.val, Cv)
    jz = vz[0] - vz[1]
    j["penalty_vertex"] = _edge_split(mesh, trv, np.sum(jz * jz, axis=1), -1.0, False)
    return j


def _volume_term(mesh, P0, P1, extra=None):
    """``|T|^2 ||Pi f0 + extra - div Pi f1||^2_{L2(T)}`` (div^2 of P_{k<=1} vanishes)."""
    rule = quad_triangle(2)
    origin, B, _ = mesh._maps
    X = origin[:, None, :] + np.einsum("tij,qj->tqi", B, rule.points)
    tri = np.broadcast_to(np.arange(mesh.n_triangles)[:, None], X.shape[:2])
    v = P0(tri, X)
    v = v - np.einsum("tii->t", P1.gradient_coef())[:, None]
    if extra is not None:
        v = v + extra[:, None]
    W = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    return mesh.areas ** 2 * np.sum(W * v * v, axis=1)


def _empty(mesh):
    return {name: np.zeros(mesh.n_triangles) for name in COMPONENTS}


def _zero_like(P):
    return PiecewisePoly(P.mesh, P.k, np.zeros_like(P.coef))


# ----------------------------------------------------------------------
# public estimators


def _estimate_single(u, F, scheme, gamma1):
    mesh = u.mesh
    P0, P1, P2 = project_source(mesh, F)
    comp = _empty(mesh)
    comp["volume"] = _volume_term(mesh, P0, P1)
    for name, val in _jump_terms(mesh, u.broken(), scheme, P1, P2, gamma1=gamma1).items():
        comp[name] += val
    msgs = []
    if F.point_loads:
        pl = point_load_indicator(F.point_loads, mesh)
        comp["point_load"] = pl.mu2
        msgs = pl.warnings
    osc2, _ = oscillation(F, mesh, projections=(P0, P1, P2))
    return EstimatorReport(comp, osc2, msgs)


def estimate_nse(u: DiscreteFunction, F, scheme: SchemeConfig):
    """Residual estimator for the stream-function Navier-Stokes problem."""
    return _estimate_single(u, F, scheme, gamma1=True)


def estimate_biharmonic(u: DiscreteFunction, F, scheme: SchemeConfig):
    """The same estimator without the nonlinear ``Lap u Curl u`` jump."""
    return _estimate_single(u, F, scheme, gamma1=False)


def estimate_vke(u1: DiscreteFunction, u2: DiscreteFunction, F, scheme: SchemeConfig):
    """Residual estimator for the von Karman plate, including point loads."""
    mesh = u1.mesh
    P0, P1, P2 = project_source(mesh, F)
    H = p2_hessians(mesh)
    H1 = np.einsum("tbij,tb->tij", H, u1.broken())
    H2 = np.einsum("tbij,tb->tij", H, u2.broken())
    comp = _empty(mesh)
    comp["volume"] = (_volume_term(mesh, P0, P1, extra=vk_bracket(H1, H2))
                      + mesh.areas ** 3 * vk_bracket(H1, H1) ** 2)
    for U, (Q1, Q2) in ((u1.broken(), (P1, P2)), (u2.broken(), (None, None))):
        for name, val in _jump_terms(mesh, U, scheme, Q1, Q2).items():
            comp[name] += val
    pl = point_load_indicator(F.point_loads, mesh)
    comp["point_load"] = pl.mu2
    osc2, _ = oscillation(F, mesh, projections=(P0, P1, P2))
    return EstimatorReport(comp, osc2, pl.warnings)


def estimate(u, F, scheme, kind):
    """Dispatch on the problem kind (``nse``, ``vke`` or ``biharmonic``)."""
    parts = u if isinstance(u, (tuple, list)) else (u,)
    if kind == "vke":
        return estimate_vke(parts[0], parts[1], F, scheme)
    return _estimate_single(parts[0], F, scheme, gamma1=(kind == "nse"))


def eta_jump(u: DiscreteFunction):
    """``||h_E^{1/2} [D^2 u] tau||_{L2(edges)} + j_h(u, u)^{1/2}``."""
    mesh = u.mesh
    tr = _traces(mesh, quad_edge(2))
    C = _side_coeffs(tr, u.broken())
    H = np.einsum("seaij,sea->seij", tr.hess, C)
    t = np.einsum("eij,ej->ei", H[0] - H[1], mesh.tangents)
    first = np.sqrt(np.sum(mesh.edge_lengths ** 2 * np.sum(t * t, axis=1)))
    b = u.dofs.B @ u.coeffs
    return float(first + np.sqrt(max(b @ (jh_broken(mesh) @ b), 0.0)))


@dataclass(frozen=True)
class Lambdas:
    """Piecewise polynomial residual data ``(Lambda_0, Lambda_1, Lambda_2)``."""

    L0: PiecewisePoly
    L1: PiecewisePoly
    L2: PiecewisePoly


def _p2_affine_gradient(mesh, U):
    """``grad u`` of broken P2 values as a piecewise P1 in the scaled basis."""
    H = np.einsum("tbij,tb->tij", p2_hessians(mesh), U)
    xc = mesh.vertices[mesh.triangles].mean(axis=1)
    xh = mesh.to_reference(np.arange(mesh.n_triangles), xc)
    gc = p2_eval_local(mesh, U, np.arange(mesh.n_triangles), xh, 1)
    hT = mesh.diameters[:, None]
    return gc, H[:, :, 0] * hT, H[:, :, 1] * hT, H


def lambdas(u, F, kind):
    """Residual data of the estimator analysis (degree ``F.k``).

    For ``nse``: ``Pi f0``, ``Pi f1 - Lap u Curl u``, ``Pi f2 - D^2 u``.
    For ``vke`` (``u`` a pair): ``Pi f0 + [u1, u2]``, ``Pi f1``, ``Pi f2 - D^2 u1``.
    """
    parts = u if isinstance(u, (tuple, list)) else (u,)
    mesh = parts[0].mesh
    P0, P1, P2 = project_source(mesh, F)
    U = parts[0].broken()
    gc, gx, gy, H = _p2_affine_gradient(mesh, U)
    c2 = P2.coef.copy()
    c2[:, 0] -= H
    c0, c1 = P0.coef.copy(), P1.coef.copy()
    if kind == "nse":
        if F.k < 1:
            raise ValueError("Lambda_1 of the NSE needs k >= 1")
        lap = H[:, 0, 0] + H[:, 1, 1]
        c1[:, 0] -= lap[:, None] * curl(gc)
        c1[:, 1] -= lap[:, None] * curl(gx)
        c1[:, 2] -= lap[:, None] * curl(gy)
    elif kind == "vke":
        H2 = np.einsum("tbij,tb->tij", p2_hessians(mesh), parts[1].broken())
        c0[:, 0] += vk_bracket(H, H2)
    return Lambdas(PiecewisePoly(mesh, F.k, c0), PiecewisePoly(mesh, F.k, c1),
                   PiecewisePoly(mesh, F.k, c2))


__all__ = [
    "COMPONENTS", "EstimatorReport", "SeparationWarning", "PointLoadIndicator",
    "project_source", "oscillation", "point_load_indicator", "estimate_nse", "estimate_vke",
    "estimate", "estimate_biharmonic", "eta_jump", "Lambdas", "lambdas", "build_psi",
    "PsiFunction", "SeparationError",
]
