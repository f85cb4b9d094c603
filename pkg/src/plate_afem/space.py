"""Quadratic finite element spaces on a triangulation.

Every discrete function is stored through its *broken P2* representation:
six Lagrange nodal values per triangle, ordered as the three vertices
followed by the midpoints of the local edges (v0 v1), (v1 v2), (v2 v0).
A scheme's degrees of freedom enter only through a sparse matrix ``B``
that maps global coefficients to these broken nodal values.
"""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Triangulation

SCHEMES = ("morley", "dg1", "dg2", "c0ip", "wopsip")
SMOOTHERS = ("id", "morley", "companion")

REF_NODES = np.array([
    [0.0, 0.0], [1.0, 0.0], [0.0, 1.0],
    [0.5, 0.0], [0.5, 0.5], [0.0, 0.5],
])
EDGE_MIDPOINT_NODE = np.array([3, 4, 5])


@dataclass(frozen=True)
class SchemeConfig:
    """Discretisation choice with penalty parameters and smoothers.

    ``smoother_R`` acts on the trial function inside the nonlinearity,
    ``smoother_SQ`` on the test function in the nonlinearity and the load.
    """

    kind: str = "morley"
    theta: float = 1.0
    sigma1: float = 20.0
    sigma2: float = 20.0
    sigma_ip: float = 20.0
    smoother_R: str = "id"
    smoother_SQ: str = "id"

    def __post_init__(self):
        object.__setattr__(self, "kind", self.kind.lower())
        object.__setattr__(self, "smoother_R", self.smoother_R.lower())
        object.__setattr__(self, "smoother_SQ", self.smoother_SQ.lower())
        if self.kind not in SCHEMES:
            raise ValueError(f"kind: unknown scheme {self.kind!r}")
        for name in ("smoother_R", "smoother_SQ"):
            if getattr(self, name) not in SMOOTHERS:
                raise ValueError(f"{name}: unknown smoother {getattr(self, name)!r}")
        if not -1.0 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [-1, 1]")
        if min(self.sigma1, self.sigma2, self.sigma_ip) <= 0:
            raise ValueError("penalty parameters must be positive")

    @property
    def symmetric(self):
        """Whether ``a_h`` is a scalar product (used for the Newton norm)."""
        return self.kind in ("morley", "wopsip") or self.theta == 1.0

    @property
    def vartheta(self):
        return 0.0 if self.kind == "c0ip" else 1.0


# ----------------------------------------------------------------------
# reference P2 basis


def p2_values(xh):
    """Lagrange P2 basis values at reference points ``xh`` (n, 2) -> (n, 6)."""
    x, y = xh[:, 0], xh[:, 1]
    l0, l1, l2 = 1.0 - x - y, x, y
    return np.column_stack([
        l0 * (2 * l0 - 1), l1 * (2 * l1 - 1), l2 * (2 * l2 - 1),
        4 * l0 * l1, 4 * l1 * l2, 4 * l2 * l0,
    ])


def p2_gradients(xh):
    """Reference gradients, shape (n, 6, 2)."""
    x, y = xh[:, 0], xh[:, 1]
    l0 = 1.0 - x - y
    g = np.empty((len(xh), 6, 2))
    g[:, 0, 0] = g[:, 0, 1] = 1.0 - 4.0 * l0
    g[:, 1, 0], g[:, 1, 1] = 4.0 * x - 1.0, 0.0
    g[:, 2, 0], g[:, 2, 1] = 0.0, 4.0 * y - 1.0
    g[:, 3, 0], g[:, 3, 1] = 4.0 * (l0 - x), -4.0 * x
    g[:, 4, 0], g[:, 4, 1] = 4.0 * y, 4.0 * x
    g[:, 5, 0], g[:, 5, 1] = -4.0 * y, 4.0 * (l0 - y)
    return g


P2_HESSIANS = np.array([
    [[4.0, 4.0], [4.0, 4.0]],
    [[4.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 4.0]],
    [[-8.0, -4.0], [-4.0, 0.0]],
    [[0.0, 4.0], [4.0, 0.0]],
    [[0.0, -4.0], [-4.0, -8.0]],
])


def physical_gradients(ghat, Binv):
    """Chain rule: reference gradients (..., 2) with per-triangle ``Binv``.

    ``ghat`` has shape (nq, nb, 2) shared by all triangles or
    (nt, nq, nb, 2); the result is (nt, nq, nb, 2).
    """
    if ghat.ndim == 3:
        nq, nb, _ = ghat.shape
        return (ghat.reshape(1, -1, 2) @ Binv).reshape(len(Binv), nq, nb, 2)
    return np.einsum("tqbk,tki->tqbi", ghat, Binv)


def physical_hessians(hhat, Binv):
    """``Binv^T H Binv`` for reference Hessians (nb, 2, 2) -> (nt, nb, 2, 2)."""
    return np.einsum("tki,bkl,tlj->tbij", Binv, hhat, Binv, optimize=True)


def p2_hessians(mesh):
    _, _, Binv = mesh._maps
    return physical_hessians(P2_HESSIANS, Binv)


# ----------------------------------------------------------------------
# degree-of-freedom maps


@dataclass(frozen=True, eq=False)
class DofMap:
    """Global degrees of freedom of one scheme on one mesh.

    Attributes
    ----------
    B : sparse (6 * ntri, ndof)
        Maps global coefficients to broken P2 nodal values.
    vertex_dof, edge_dof : arrays
        Global index of each vertex / edge DOF, ``-1`` when eliminated or
        absent (Morley and C0IP only).
    """

    kind: str
    mesh: Triangulation
    B: sp.csr_matrix
    ndof: int
    vertex_dof: np.ndarray | None = None
    edge_dof: np.ndarray | None = None

    @property
    def is_broken(self):
        return self.kind in ("dg1", "dg2", "wopsip")


def _interior_numbering(mesh):
    vdof = -np.ones(mesh.n_vertices, dtype=np.int64)
    inner_v = np.flatnonzero(~mesh.boundary_vertices)
    vdof[inner_v] = np.arange(inner_v.size)
    edof = -np.ones(mesh.n_edges, dtype=np.int64)
    inner_e = np.flatnonzero(mesh.interior_edges)
    edof[inner_e] = inner_v.size + np.arange(inner_e.size)
    return vdof, edof, inner_v.size + inner_e.size


def morley_local_inverse(mesh):
    """Per-triangle inverse of the Morley DOF matrix on the P2 nodal basis.

    Column ``k`` of the result holds the nodal values of the local basis
    function dual to DOF ``k`` (vertex values, then mean normal derivatives
    along local edges in the direction of the global edge normals).
    """
    nt = mesh.n_triangles
    _, _, Binv = mesh._maps
    ghat = p2_gradients(REF_NODES[EDGE_MIDPOINT_NODE])  # (3, 6, 2)
    g = np.einsum("kbj,tji->tkbi", ghat, Binv)  # (nt, 3, 6, 2)
    nu = mesh.normals[mesh.tri_edges]  # (nt, 3, 2)
    D = np.zeros((nt, 6, 6))
    D[:, 0, 0] = D[:, 1, 1] = D[:, 2, 2] = 1.0
    D[:, 3:, :] = np.einsum("tkbi,tki->tkb", g, nu)
    return np.linalg.inv(D)


def build_dofmap(mesh: Triangulation, kind: str) -> DofMap:
    kind = kind.lower()
    if kind not in SCHEMES:
        raise ValueError(f"kind: unknown scheme {kind!r}")
    return mesh.cached(("dofmap", kind), lambda: _build_dofmap(mesh, kind))


def _build_dofmap(mesh, kind):
    nt = mesh.n_triangles
    if kind in ("dg1", "dg2", "wopsip"):
        return DofMap(kind, mesh, sp.identity(6 * nt, format="csr"), 6 * nt)
    vdof, edof, ndof = _interior_numbering(mesh)
    gv = vdof[mesh.triangles]  # (nt, 3)
    ge = edof[mesh.tri_edges]  # (nt, 3)
    gl = np.hstack([gv, ge])  # (nt, 6)
    if kind == "c0ip":
        rows = np.arange(6 * nt).reshape(nt, 6)
        keep = gl >= 0
        B = sp.csr_matrix((np.ones(keep.sum()), (rows[keep], gl[keep])), shape=(6 * nt, ndof))
        return DofMap(kind, mesh, B, ndof, vdof, edof)
    if kind == "morley":
        Dinv = morley_local_inverse(mesh)  # (nt, node i, dof k)
        rows = np.broadcast_to((6 * np.arange(nt))[:, None, None] + np.arange(6)[None, :, None], (nt, 6, 6))
        cols = np.broadcast_to(gl[:, None, :], (nt, 6, 6))
        keep = cols >= 0
        B = sp.csr_matrix((Dinv[keep], (rows[keep], cols[keep])), shape=(6 * nt, ndof))
        return DofMap(kind, mesh, B, ndof, vdof, edof)
    raise ValueError(f"kind: unknown scheme {kind!r}")


# ----------------------------------------------------------------------
# discrete functions


def p2_eval_local(mesh, U, tri, xh, order):
    """Evaluate broken P2 nodal values ``U`` (nt, 6) at reference points.

    ``tri`` and ``xh`` are matched arrays of triangle indices and
    reference coordinates.  Returns values (n,), gradients (n, 2) or
    Hessians (n, 2, 2).
    """
    tri = np.asarray(tri)
    coef = U[tri]
    if order == 0:
        return np.einsum("nb,nb->n", p2_values(xh), coef)
    _, _, Binv = mesh._maps
    if order == 1:
        g = np.einsum("nbk,nki->nbi", p2_gradients(xh), Binv[tri])
        return np.einsum("nbi,nb->ni", g, coef)
    if order == 2:
        H = physical_hessians(P2_HESSIANS, Binv[tri])
        return np.einsum("nbij,nb->nij", H, coef)
    raise ValueError("order must be 0, 1 or 2")


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    dofs: DofMap
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.dofs.ndof,):
            raise ValueError(f"expected {self.dofs.ndof} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    @property
    def mesh(self):
        return self.dofs.mesh

    def broken(self):
        """Broken P2 nodal values, shape (ntri, 6)."""
        return (self.dofs.B @ self.coeffs).reshape(-1, 6)

    def eval(self, T, p, order=0, tol=1e-10):
        """Value, gradient or Hessian of the restriction to triangle ``T`` at ``p``."""
        p = np.asarray(p, dtype=float)
        xh = self.mesh.to_reference(np.array([T]), p[None, :])
        lam = np.array([1.0 - xh.sum(), *xh[0]])
        if np.any(lam < -tol):
            raise ValueError(f"point {p} is outside triangle {T}")
        return p2_eval_local(self.mesh, self.broken(), [T], xh, order)[0]

    def edge_jump(self, E, p, order=0):
        return edge_jump_p2(self.mesh, self.broken(), E, p, order)

    def edge_average(self, E, p, order=0):
        return edge_average_p2(self.mesh, self.broken(), E, p, order)


def _edge_traces_point(mesh, U, E, p, order):
    p = np.asarray(p, dtype=float)
    A, B = mesh.vertices[mesh.edges[E]]
    t = B - A
    if abs((p - A)[0] * t[1] - (p - A)[1] * t[0]) > 1e-10 * np.dot(t, t):
        raise ValueError("point is not on the edge")
    tp, tm = mesh.edge_patch(E)
    out = []
    for T in (tp, tm):
        if T is None:
            out.append(None)
            continue
        xh = mesh.to_reference(np.array([T]), p[None, :])
        out.append(p2_eval_local(mesh, U, [T], xh, order)[0])
    return out


def edge_jump_p2(mesh, U, E, p, order=0):
    """``[v]_E(p)``: T+ trace minus T- trace, the trace itself on the boundary."""
    plus, minus = _edge_traces_point(mesh, U, E, p, order)
    return plus if minus is None else plus - minus


def edge_average_p2(mesh, U, E, p, order=0):
    plus, minus = _edge_traces_point(mesh, U, E, p, order)
    return plus if minus is None else 0.5 * (plus + minus)


def interpolate_p2(mesh, f):
    """Broken P2 nodal interpolation of a callable ``f(x) -> values``."""
    origin, B, _ = mesh._maps
    X = origin[:, None, :] + np.einsum("tij,nj->tni", B, REF_NODES)
    return f(X.reshape(-1, 2)).reshape(-1, 6)


def dg_function(mesh, U):
    """Wrap broken nodal values (ntri, 6) as a dG discrete function."""
    dm = build_dofmap(mesh, "dg1")
    return DiscreteFunction(dm, np.asarray(U, dtype=float).ravel())


# ----------------------------------------------------------------------
# batched edge traces


@dataclass(frozen=True, eq=False)
class EdgeTraces:
    """P2 basis traces at Gauss points of all edges.

    For the minus side of boundary edges the tables are zero and the
    triangle index repeats T+, so assembled contributions vanish.
    """

    s: np.ndarray  # (nq,) parameter in [0, 1]
    w: np.ndarray  # (nq,) weights on [0, 1]
    x: np.ndarray  # (ne, nq, 2) physical points
    tri: np.ndarray  # (ne, 2)
    val: np.ndarray  # (2, ne, nq, 6)
    grad: np.ndarray  # (2, ne, nq, 6, 2)
    hess: np.ndarray  # (2, ne, 6, 2, 2)
    xhat: np.ndarray  # (2, ne, nq, 2)
    interior: np.ndarray  # (ne,) bool

    def jump(self, table):
        """Jump table (ne, ..., 12) over the stacked dofs of (T+, T-)."""
        return np.concatenate([table[0], -table[1]], axis=-1)

    def average(self, table):
        f = np.where(self.interior, 0.5, 1.0).reshape((-1,) + (1,) * (table.ndim - 2))
        return np.concatenate([f * table[0], f * table[1]], axis=-1)

    def dofs(self):
        """Global broken dof indices (ne, 12) matching :meth:`jump`."""
        base = 6 * self.tri[:, :, None] + np.arange(6)[None, None, :]
        return base.reshape(len(self.tri), 12)


def edge_traces(mesh, rule):
    """Evaluate P2 bases on both sides of every edge at the points of ``rule``."""
    s, w = rule.points, rule.weights
    A = mesh.vertices[mesh.edges[:, 0]]
    Bv = mesh.vertices[mesh.edges[:, 1]]
    x = A[:, None, :] + s[None, :, None] * (Bv - A)[:, None, :]
    interior = mesh.interior_edges
    tri = mesh.edge_tris.copy()
    tri[~interior, 1] = tri[~interior, 0]
    ne, nq = x.shape[:2]
    _, _, Binv = mesh._maps
    val = np.zeros((2, ne, nq, 6))
    grad = np.zeros((2, ne, nq, 6, 2))
    hess = np.zeros((2, ne, 6, 2, 2))
    xhat = np.zeros((2, ne, nq, 2))
    for side in range(2):
        t = np.repeat(tri[:, side], nq)
        xh = mesh.to_reference(t, x.reshape(-1, 2))
        xhat[side] = xh.reshape(ne, nq, 2)
        val[side] = p2_values(xh).reshape(ne, nq, 6)
        g = np.einsum("nbk,nki->nbi", p2_gradients(xh), Binv[t])
        grad[side] = g.reshape(ne, nq, 6, 2)
        hess[side] = physical_hessians(P2_HESSIANS, Binv[tri[:, side]])
    val[1, ~interior] = 0.0
    grad[1, ~interior] = 0.0
    hess[1, ~interior] = 0.0
    return EdgeTraces(s, w, x, tri, val, grad, hess, xhat, interior)
