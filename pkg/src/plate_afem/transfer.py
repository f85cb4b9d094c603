"""Interpolation, companion and prolongation operators.

Operators act on broken P2 nodal values (see :mod:`plate_afem.space`)
and are returned as sparse matrices where possible.  The companion
operator produces Hsieh-Clough-Tocher (HCT) macro elements stored as
monomial coefficients (in reference coordinates) on the three centroid
subtriangles of each triangle: 30 numbers per triangle.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import null_space

from .quadrature import REF_CENTROID, REF_VERTICES, quad_edge
from .space import (
    P2_HESSIANS,
    REF_NODES,
    DiscreteFunction,
    build_dofmap,
    p2_gradients,
    p2_hessians,
    p2_values,
    physical_gradients,
)

# ----------------------------------------------------------------------
# cubic monomials on the reference triangle

CUBIC_EXPONENTS = np.array([
    (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3),
])


def _pow(x, k):
    return np.where(k >= 0, x ** np.maximum(k, 0), 0.0)


def cubic_tables(xh):
    """Values (n, 10), gradients (n, 10, 2), Hessians (n, 10, 2, 2)."""
    x, y = xh[:, 0:1], xh[:, 1:2]
    a, b = CUBIC_EXPONENTS[:, 0], CUBIC_EXPONENTS[:, 1]
    val = _pow(x, a) * _pow(y, b)
    gx = a * _pow(x, a - 1) * _pow(y, b)
    gy = b * _pow(x, a) * _pow(y, b - 1)
    hxx = a * (a - 1) * _pow(x, a - 2) * _pow(y, b)
    hxy = a * b * _pow(x, a - 1) * _pow(y, b - 1)
    hyy = b * (b - 1) * _pow(x, a) * _pow(y, b - 2)
    grad = np.stack([gx, gy], axis=-1)
    hess = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
    return val, grad, hess


def hct_subtriangle(xh):
    """Index of the centroid subtriangle ``(v_s, v_s+1, c)`` containing each point."""
    lam = np.column_stack([1.0 - xh[:, 0] - xh[:, 1], xh[:, 0], xh[:, 1]])
    return (np.argmin(lam, axis=1) + 1) % 3


@lru_cache(maxsize=None)
def hct_reference():
    """C1 nullspace ``N`` (30, 12) and reference functionals ``L`` (15, 30).

    Rows of ``L``: values at the vertices, reference gradients at the
    vertices and reference gradients at the edge midpoints.
    """
    t = np.linspace(0.0, 1.0, 5)
    rows = []
    for s in range(3):
        seg = REF_VERTICES[s][None, :] + t[:, None] * (REF_CENTROID - REF_VERTICES[s])[None, :]
        v, g, _ = cubic_tables(seg)
        left, right = (s - 1) % 3, s
        for tab in (v, g[..., 0], g[..., 1]):
            r = np.zeros((len(seg), 30))
            r[:, 10 * left:10 * left + 10] = tab
            r[:, 10 * right:10 * right + 10] -= tab
            rows.append(r)
    N = null_space(np.vstack(rows))
    assert N.shape[1] == 12
    L = np.zeros((15, 30))
    v, g, _ = cubic_tables(REF_VERTICES)
    mids = 0.5 * (REF_VERTICES + np.roll(REF_VERTICES, -1, axis=0))
    _, gm, _ = cubic_tables(mids)
    for k in range(3):
        blk = slice(10 * k, 10 * k + 10)
        L[k, blk] = v[k]
        L[3 + 2 * k, blk] = g[k, :, 0]
        L[4 + 2 * k, blk] = g[k, :, 1]
        L[9 + 2 * k, blk] = gm[k, :, 0]
        L[10 + 2 * k, blk] = gm[k, :, 1]
    return N, L


# ----------------------------------------------------------------------
# local representations used by the smoothers


@dataclass(frozen=True, eq=False)
class LocalRep:
    """Per-triangle polynomial representation reached through ``M``.

    ``kind`` is ``"p2"`` (six Lagrange nodal values) or ``"hct"`` (thirty
    cubic monomial coefficients); ``M`` maps global coefficients to the
    stacked local ones.
    """

    kind: str
    M: sp.spmatrix

    @property
    def nloc(self):
        return 6 if self.kind == "p2" else 30

    def tables(self, mesh, xh, tri=None):
        """Basis tables at reference points ``xh`` (nq, 2).

        Returns ``(idx, val, grad, hess)`` where ``idx`` (nq, na) lists the
        local coefficients active at each point, ``val`` is (nq, na),
        ``grad`` (nt, nq, na, 2) and ``hess`` (nt, nq, na, 2, 2).
        """
        _, _, Binv = mesh._maps
        if tri is not None:
            Binv = Binv[tri]
        nq = len(xh)
        if self.kind == "p2":
            idx = np.broadcast_to(np.arange(6), (nq, 6))
            val = p2_values(xh)
            grad = physical_gradients(p2_gradients(xh), Binv)
            H = np.einsum("tki,bkl,tlj->tbij", Binv, P2_HESSIANS, Binv, optimize=True)
            hess = np.broadcast_to(H[:, None], (len(Binv), nq, 6, 2, 2))
            return idx, val, grad, hess
        sub = hct_subtriangle(xh)
        idx = 10 * sub[:, None] + np.arange(10)[None, :]
        val, g, h = cubic_tables(xh)
        grad = physical_gradients(g, Binv)
        hess = np.einsum("tki,qbkl,tlj->tqbij", Binv, h, Binv, optimize=True)
        return idx, val, grad, hess

    def local(self, c):
        return (self.M @ c).reshape(-1, self.nloc)

    def evaluate(self, mesh, c, xh, tri=None):
        """Values (nt, nq), gradients (nt, nq, 2), Hessians (nt, nq, 2, 2)."""
        C = self.local(c)
        if tri is not None:
            C = C[tri]
        idx, val, grad, hess = self.tables(mesh, xh, tri)
        coef = C[:, idx]  # (nt, nq, na)
        v = np.einsum("qa,tqa->tq", val, coef)
        g = np.einsum("tqai,tqa->tqi", grad, coef)
        H = np.einsum("tqaij,tqa->tqij", hess, coef)
        return v, g, H


# ----------------------------------------------------------------------
# generalised Morley interpolation


def _vertex_counts(mesh):
    return np.bincount(mesh.triangles.ravel(), minlength=mesh.n_vertices)


def morley_matrix(mesh):
    """Generalised Morley interpolation on broken P2, shape (ndof_M, 6 ntri)."""
    def build():
        dm = build_dofmap(mesh, "morley")
        nt = mesh.n_triangles
        cnt = _vertex_counts(mesh)
        rows, cols, vals = [], [], []
        gv = dm.vertex_dof[mesh.triangles]
        t, k = np.nonzero(gv >= 0)
        rows.append(gv[t, k])
        cols.append(6 * t + k)
        vals.append(1.0 / cnt[mesh.triangles[t, k]])
        _, _, Binv = mesh._maps
        mids = REF_NODES[3:]
        g = np.einsum("kbj,tji->tkbi", p2_gradients(mids), Binv)  # (nt, 3, 6, 2)
        nu = mesh.normals[mesh.tri_edges]
        dn = np.einsum("tkbi,tki->tkb", g, nu)
        ge = dm.edge_dof[mesh.tri_edges]
        t, k = np.nonzero(ge >= 0)
        rows.append(np.repeat(ge[t, k], 6))
        cols.append((6 * t[:, None] + np.arange(6)[None, :]).ravel())
        vals.append(0.5 * dn[t, k].ravel())
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dm.ndof, 6 * nt))
    return mesh.cached("morley_matrix", build)


def ic_matrix(mesh):
    """C0 transfer on broken P2: averaged vertex values and midpoint traces."""
    def build():
        dm = build_dofmap(mesh, "c0ip")
        cnt = _vertex_counts(mesh)
        gv = dm.vertex_dof[mesh.triangles]
        t, k = np.nonzero(gv >= 0)
        rows = [gv[t, k]]
        cols = [6 * t + k]
        vals = [1.0 / cnt[mesh.triangles[t, k]]]
        ge = dm.edge_dof[mesh.tri_edges]
        t, k = np.nonzero(ge >= 0)
        rows.append(ge[t, k])
        cols.append(6 * t + 3 + k)
        vals.append(np.full(t.size, 0.5))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dm.ndof, 6 * mesh.n_triangles))
    return mesh.cached("ic_matrix", build)


# ----------------------------------------------------------------------
# evaluable fields


class ExactField:
    """A global function ``fn(x, order)`` with ``x`` of shape (n, 2)."""

    def __init__(self, fn):
        self.fn = fn

    def eval(self, tri, x, order):
        return self.fn(x, order)


class P2Field:
    def __init__(self, mesh, U):
        self.mesh, self.U = mesh, np.asarray(U).reshape(-1, 6)

    def eval(self, tri, x, order):
        from .space import p2_eval_local
        xh = self.mesh.to_reference(tri, x)
        return p2_eval_local(self.mesh, self.U, tri, xh, order)


class HCTField:
    """HCT macro elements with local coefficients ``C`` (ntri, 30)."""

    def __init__(self, mesh, C):
        self.mesh, self.C = mesh, np.asarray(C).reshape(-1, 30)

    def eval(self, tri, x, order):
        tri = np.asarray(tri)
        xh = self.mesh.to_reference(tri, x)
        sub = hct_subtriangle(xh)
        coef = self.C[tri[:, None], 10 * sub[:, None] + np.arange(10)[None, :]]
        v, g, h = cubic_tables(xh)
        if order == 0:
            return np.einsum("na,na->n", v, coef)
        _, _, Binv = self.mesh._maps
        if order == 1:
            return np.einsum("na,nak,nki->ni", coef, g, Binv[tri], optimize=True)
        return np.einsum("na,nki,nakl,nlj->nij", coef, Binv[tri], h, Binv[tri], optimize=True)


class ParentField:
    """View of a coarse-mesh field through the parent map of a finer mesh."""

    def __init__(self, field, parent):
        self.field, self.parent = field, np.asarray(parent)

    def eval(self, tri, x, order):
        return self.field.eval(self.parent[np.asarray(tri)], x, order)


def as_field(f):
    if isinstance(f, DiscreteFunction):
        return P2Field(f.mesh, f.broken())
    return f


def morley_interpolate(mesh, g, nq=8):
    """Generalised Morley interpolation of an evaluable field ``g``.

    Vertex DOFs average the one-sided values over the triangles at the
    vertex; edge DOFs are Gauss means of the averaged normal derivative.
    """
    g = as_field(g)
    dm = build_dofmap(mesh, "morley")
    coef = np.zeros(dm.ndof)
    cnt = _vertex_counts(mesh)
    nt = mesh.n_triangles
    t = np.repeat(np.arange(nt), 3)
    v = mesh.triangles.ravel()
    vals = g.eval(t, mesh.vertices[v], 0)
    gdof = dm.vertex_dof[v]
    keep = gdof >= 0
    np.add.at(coef, gdof[keep], vals[keep] / cnt[v[keep]])

    inner = np.flatnonzero(mesh.interior_edges)
    rule = quad_edge(2 * nq - 1)
    A = mesh.vertices[mesh.edges[inner, 0]]
    B = mesh.vertices[mesh.edges[inner, 1]]
    X = A[:, None, :] + rule.points[None, :, None] * (B - A)[:, None, :]
    nu = mesh.normals[inner]
    avg = 0.0
    for side in range(2):
        tri = np.repeat(mesh.edge_tris[inner, side], len(rule))
        gr = g.eval(tri, X.reshape(-1, 2), 1).reshape(len(inner), len(rule), 2)
        avg = avg + 0.5 * np.einsum("eqi,ei->eq", gr, nu)
    coef[dm.edge_dof[inner]] = avg @ rule.weights
    return DiscreteFunction(dm, coef)


# ----------------------------------------------------------------------
# companion operator


def companion_matrix(mesh):
    """Sparse map from Morley coefficients to HCT coefficients (30 ntri, ndof_M).

    The HCT element takes the Morley vertex values, vertex gradients
    averaged over adjacent triangles (zero on the boundary) and a midpoint
    normal derivative chosen so that the Simpson mean of the quadratic
    edge normal derivative equals the Morley edge DOF.  The result is C1,
    vanishes with its gradient on the boundary and is a right inverse of
    the Morley interpolation.
    """
    return mesh.cached("companion_matrix", lambda: _build_companion(mesh))


def _build_companion(mesh):
    dm = build_dofmap(mesh, "morley")
    n = dm.ndof
    nt, nv, ne = mesh.n_triangles, mesh.n_vertices, mesh.n_edges
    T = mesh.triangles
    _, _, Binv = mesh._maps
    bnd_v = mesh.boundary_vertices
    cnt = _vertex_counts(mesh)

    # averaged vertex gradients, rows 2*v + i
    g = np.einsum("kbj,tji->tkib", p2_gradients(REF_VERTICES), Binv)  # (nt, 3, 2, 6)
    rows = np.broadcast_to(2 * T[:, :, None, None] + np.arange(2)[None, None, :, None], g.shape)
    cols = np.broadcast_to(6 * np.arange(nt)[:, None, None, None] + np.arange(6), g.shape)
    w = g / cnt[T][:, :, None, None]
    w = np.where(bnd_v[T][:, :, None, None], 0.0, w)
    G = sp.csr_matrix((w.ravel(), (rows.ravel(), cols.ravel())), shape=(2 * nv, 6 * nt))
    Gvert = (G @ dm.B).tocsr()

    inner_v = np.flatnonzero(dm.vertex_dof >= 0)
    Vv = sp.csr_matrix((np.ones(inner_v.size), (inner_v, dm.vertex_dof[inner_v])), shape=(nv, n))
    inner_e = np.flatnonzero(dm.edge_dof >= 0)
    Ed = sp.csr_matrix((np.ones(inner_e.size), (inner_e, dm.edge_dof[inner_e])), shape=(ne, n))
    e = np.arange(ne)
    nu = mesh.normals
    sel = []
    for end in range(2):
        v = mesh.edges[:, end]
        sel.append(sp.csr_matrix(
            (nu.ravel(), (np.repeat(e, 2), (2 * v[:, None] + np.arange(2)).ravel())),
            shape=(ne, 2 * nv)))
    GM = (6.0 * Ed - sel[0] @ Gvert - sel[1] @ Gvert) / 4.0
    S = sp.vstack([Vv, Gvert, GM]).tocsr()

    gather = np.empty((nt, 12), dtype=np.int64)
    gather[:, :3] = T
    gather[:, 3:9] = (nv + 2 * T[:, :, None] + np.arange(2)).reshape(nt, 6)
    gather[:, 9:] = 3 * nv + mesh.tri_edges
    Gat = sp.csr_matrix((np.ones(12 * nt), (np.arange(12 * nt), gather.ravel())),
                        shape=(12 * nt, S.shape[0]))
    D = (Gat @ S).tocsr()

    N, L = hct_reference()
    Mphys = np.zeros((nt, 12, 15))
    Mphys[:, 0, 0] = Mphys[:, 1, 1] = Mphys[:, 2, 2] = 1.0
    BinvT = np.transpose(Binv, (0, 2, 1))
    nu_loc = mesh.normals[mesh.tri_edges]  # (nt, 3, 2)
    for k in range(3):
        Mphys[:, 3 + 2 * k:5 + 2 * k, 3 + 2 * k:5 + 2 * k] = BinvT
        Mphys[:, 9 + k, 9 + 2 * k:11 + 2 * k] = np.einsum("ti,tij->tj", nu_loc[:, k], BinvT)
    DT = Mphys @ (L @ N)  # (nt, 12, 12)
    Cmap = N[None] @ np.linalg.inv(DT)  # (nt, 30, 12)
    r = np.broadcast_to(30 * np.arange(nt)[:, None, None] + np.arange(30)[None, :, None], Cmap.shape)
    c = np.broadcast_to(12 * np.arange(nt)[:, None, None] + np.arange(12)[None, None, :], Cmap.shape)
    blk = sp.csr_matrix((Cmap.ravel(), (r.ravel(), c.ravel())), shape=(30 * nt, 12 * nt))
    return (blk @ D).tocsr()


def companion(vM: DiscreteFunction) -> HCTField:
    """Companion lift ``J vM`` of a Morley function as an HCT field."""
    if vM.dofs.kind != "morley":
        raise ValueError("companion expects a Morley function")
    return HCTField(vM.mesh, companion_matrix(vM.mesh) @ vM.coeffs)


def ic_transfer(vM: DiscreteFunction) -> DiscreteFunction:
    """Transfer a Morley (or any broken P2) function into S^2_0."""
    mesh = vM.mesh
    return DiscreteFunction(build_dofmap(mesh, "c0ip"), ic_matrix(mesh) @ (vM.dofs.B @ vM.coeffs))


def smoother_rep(dofs, choice) -> LocalRep:
    """Local representation of ``R``, ``S`` or ``Q`` applied to the space ``dofs``."""
    mesh = dofs.mesh
    if choice == "id":
        return LocalRep("p2", dofs.B)
    key = ("smoother", choice, dofs.kind)

    def build():
        if dofs.kind == "morley":
            IMB = sp.identity(dofs.ndof, format="csr")
        else:
            IMB = morley_matrix(mesh) @ dofs.B
        if choice == "morley":
            return LocalRep("p2", (build_dofmap(mesh, "morley").B @ IMB).tocsr())
        if choice == "companion":
            return LocalRep("hct", (companion_matrix(mesh) @ IMB).tocsr())
        raise ValueError(f"unknown smoother {choice!r}")
    return mesh.cached(key, build)


# ----------------------------------------------------------------------
# L2 projections onto piecewise P0 / P1


@dataclass(frozen=True, eq=False)
class PiecewisePoly:
    """Piecewise P_k (k <= 1) in the scaled basis 1, (x-xc)/h, (y-yc)/h.

    ``coef`` has shape (ntri, nb, *component_shape).
    """

    mesh: object
    k: int
    coef: np.ndarray

    def _basis(self, tri, x):
        c = self.mesh.vertices[self.mesh.triangles[tri]].mean(axis=-2)
        h = self.mesh.diameters[tri][..., None]
        xi = (x - c) / h
        one = np.ones(x.shape[:-1])
        if self.k == 0:
            return one[..., None]
        return np.stack([one, xi[..., 0], xi[..., 1]], axis=-1)

    def __call__(self, tri, x):
        """Values at points ``x`` (..., 2) in triangles ``tri`` (...)."""
        phi = self._basis(tri, x)
        cs = self.coef.shape[2:]
        cf = self.coef.reshape(self.coef.shape[0], self.coef.shape[1], -1)[tri]
        out = np.einsum("...b,...bc->...c", phi, cf)
        return out.reshape(phi.shape[:-1] + cs)

    def gradient_coef(self):
        """Constant gradient per triangle: (ntri, *component_shape, 2)."""
        h = self.mesh.diameters.reshape((-1,) + (1,) * (self.coef.ndim - 2))
        if self.k == 0:
            return np.zeros(self.coef.shape[:1] + self.coef.shape[2:] + (2,))
        return np.stack([self.coef[:, 1] / h, self.coef[:, 2] / h], axis=-1)


def l2_project(mesh, g, k, rule):
    """Per-triangle L2 projection of ``g(X) -> (n, nq, *shape)`` onto P_k.

    ``rule`` is a :class:`plate_afem.integrate.CellRule`.
    """
    if k not in (0, 1):
        raise ValueError("k must be 0 or 1")
    nb = 1 if k == 0 else 3
    proto = PiecewisePoly(mesh, k, np.zeros((mesh.n_triangles, nb)))
    coef = None
    for gi, (tris, _) in enumerate(rule.groups):
        X, W = rule.physical(mesh, gi)
        gv = np.asarray(g(X))
        phi = proto._basis(tris[:, None], X)  # (n, nq, nb)
        Mass = np.einsum("tq,tqa,tqb->tab", W, phi, phi, optimize=True)
        rhs = np.einsum("tq,tqa,tq...->ta...", W, phi, gv, optimize=True)
        flat = rhs.reshape(len(tris), nb, -1)
        sol = np.linalg.solve(Mass, flat).reshape(rhs.shape)
        if coef is None:
            coef = np.zeros((mesh.n_triangles,) + rhs.shape[1:])
        coef[tris] = sol
    return PiecewisePoly(mesh, k, coef)


# ----------------------------------------------------------------------
# prolongation


def embedding_matrix(coarse, fine):
    """Exact P2 embedding from broken coarse to broken fine nodal values."""
    if fine.parent is None or len(fine.parent) != fine.n_triangles \
            or fine.parent.max() >= coarse.n_triangles:
        raise ValueError("meshes are not nested")
    origin, B, _ = fine._maps
    X = origin[:, None, :] + np.einsum("tij,nj->tni", B, REF_NODES)  # (ntf, 6, 2)
    par = np.repeat(fine.parent, 6)
    xh = coarse.to_reference(par, X.reshape(-1, 2))
    lam = np.column_stack([1 - xh.sum(1), xh])
    if lam.min() < -1e-9:
        raise ValueError("meshes are not nested")
    W = p2_values(xh)  # (6 ntf, 6)
    rows = np.repeat(np.arange(6 * fine.n_triangles), 6)
    cols = (6 * par[:, None] + np.arange(6)[None, :]).ravel()
    return sp.csr_matrix((W.ravel(), (rows, cols)), shape=(6 * fine.n_triangles, 6 * coarse.n_triangles))


def prolong(u_coarse: DiscreteFunction, fine, scheme) -> DiscreteFunction:
    """Initial guess on ``fine`` for nested iteration.

    With a companion smoother the coarse function is lifted by ``J I_M``,
    Morley-interpolated on the fine mesh and mapped into the fine space;
    otherwise the coarse piecewise polynomial is embedded exactly and then
    interpolated (Morley) or transferred (C0IP).
    """
    coarse = u_coarse.mesh
    fine_dofs = build_dofmap(fine, scheme.kind)
    companion_on = "companion" in (scheme.smoother_R, scheme.smoother_SQ)
    if companion_on:
        rep = smoother_rep(u_coarse.dofs, "companion")
        field = ParentField(HCTField(coarse, rep.local(u_coarse.coeffs)), fine.parent)
        embedding_matrix(coarse, fine)  # nestedness check
        vM = morley_interpolate(fine, field)
        broken = vM.dofs.B @ vM.coeffs
    else:
        broken = embedding_matrix(coarse, fine) @ (u_coarse.dofs.B @ u_coarse.coeffs)
    if scheme.kind == "morley":
        c = vM.coeffs if companion_on else morley_matrix(fine) @ broken
    elif scheme.kind == "c0ip":
        c = ic_matrix(fine) @ broken
    else:
        c = broken
    return DiscreteFunction(fine_dofs, c)


__all__ = [
    "LocalRep", "morley_matrix", "ic_matrix", "morley_interpolate", "companion_matrix",
    "companion", "ic_transfer", "smoother_rep", "l2_project", "PiecewisePoly",
    "embedding_matrix", "prolong", "ExactField", "P2Field", "HCTField", "ParentField",
    "hct_reference", "cubic_tables", "hct_subtriangle", "p2_hessians",
]
