"""Assembly of bilinear, penalty and trilinear forms and of the load.

All bilinear forms are first assembled on broken P2 (six nodal values per
triangle) and then restricted to a scheme through ``A = B^T A_broken B``.
The matrix convention is ``A[i, j] = a(phi_j, phi_i)`` (trial ``j``,
test ``i``).
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .integrate import cell_rule
from .quadrature import QuadRule, quad_edge, quad_triangle, split_rule
from .space import (
    DiscreteFunction,
    SchemeConfig,
    build_dofmap,
    edge_traces,
    p2_hessians,
)
from .transfer import LocalRep, hct_subtriangle, smoother_rep

PROBLEMS = ("biharmonic", "nse", "vke")
_VERTEX_RULE = QuadRule(np.array([0.0, 1.0]), np.array([1.0, 1.0]), 1)


# ----------------------------------------------------------------------
# broken-P2 building blocks


def _block_diag(mesh, K):
    nt, nb = K.shape[0], K.shape[1]
    base = 6 * np.arange(nt)[:, None, None]
    r = np.broadcast_to(base + np.arange(nb)[None, :, None], K.shape)
    c = np.broadcast_to(base + np.arange(nb)[None, None, :], K.shape)
    n = 6 * nt
    return sp.csr_matrix((K.ravel(), (r.ravel(), c.ravel())), shape=(n, n))


def _edge_assemble(mesh, tr, K):
    """Scatter per-edge (ne, 12, 12) blocks into a broken sparse matrix."""
    d = tr.dofs()
    r = np.broadcast_to(d[:, :, None], K.shape)
    c = np.broadcast_to(d[:, None, :], K.shape)
    n = 6 * mesh.n_triangles
    return sp.csr_matrix((K.ravel(), (r.ravel(), c.ravel())), shape=(n, n))


def _traces(mesh, rule):
    return mesh.cached(("traces", len(rule), rule.degree), lambda: edge_traces(mesh, rule))


def _dn(tr, mesh):
    """Jump table of the normal derivative, (ne, nq, 12)."""
    dn = np.einsum("sequi,ei->sequ", tr.grad, mesh.normals)
    return tr.jump(dn)


def apw_broken(mesh):
    H = p2_hessians(mesh)
    K = mesh.areas[:, None, None] * np.einsum("tbij,tcij->tbc", H, H)
    return _block_diag(mesh, K)


def laplace_broken(mesh):
    H = p2_hessians(mesh)
    L = H[:, :, 0, 0] + H[:, :, 1, 1]
    return _block_diag(mesh, mesh.areas[:, None, None] * L[:, :, None] * L[:, None, :])


def cdg_broken(mesh, sigma1, sigma2, values=True):
    """dG penalty; with ``values=False`` only the normal-derivative part (C0IP)."""
    tr = _traces(mesh, quad_edge(4))
    h = mesh.edge_lengths[:, None, None]
    w = tr.w
    Jn = _dn(tr, mesh)
    K = sigma2 * np.einsum("q,eqa,eqb->eab", w, Jn, Jn, optimize=True)
    if values:
        Jv = tr.jump(tr.val)
        K = K + sigma1 / h ** 2 * np.einsum("q,eqa,eqb->eab", w, Jv, Jv, optimize=True)
    return _edge_assemble(mesh, tr, K)


def _vertex_and_mean_jumps(mesh):
    trv = _traces(mesh, _VERTEX_RULE)
    Jz = trv.jump(trv.val)  # (ne, 2, 12)
    tr = _traces(mesh, quad_edge(2))
    mean_dn = np.einsum("q,eqa->ea", tr.w, _dn(tr, mesh))  # edge mean of [d_nu]
    return trv, Jz, mean_dn


def jh_broken(mesh):
    """``j_h``: vertex jumps scaled by h^-2 plus products of mean normal jumps."""
    trv, Jz, md = _vertex_and_mean_jumps(mesh)
    h = mesh.edge_lengths[:, None, None]
    K = np.einsum("eza,ezb->eab", Jz, Jz) / h ** 2 + md[:, :, None] * md[:, None, :]
    return _edge_assemble(mesh, trv, K)


def cp_broken(mesh):
    """WOPSIP penalty with h^-4 scaling of vertex jumps and integrated normal jumps."""
    trv, Jz, md = _vertex_and_mean_jumps(mesh)
    h = mesh.edge_lengths[:, None, None]
    K = (np.einsum("eza,ezb->eab", Jz, Jz) + h ** 2 * md[:, :, None] * md[:, None, :]) / h ** 4
    return _edge_assemble(mesh, trv, K)


def consistency_broken(mesh):
    """``M[i, j] = sum_E int <D^2 phi_i nu> . [grad phi_j]``."""
    tr = _traces(mesh, quad_edge(2))
    h = mesh.edge_lengths[:, None, None]
    Hn = np.einsum("seaij,ej->seai", tr.hess, mesh.normals)  # (2, ne, 6, 2)
    avg = tr.average(np.moveaxis(Hn, -1, -2))  # (ne, 2, 12)
    Jg = tr.jump(np.moveaxis(tr.grad, -1, -2))  # (ne, nq, 2, 12)
    K = h * np.einsum("q,eia,eqib->eab", tr.w, avg, Jg, optimize=True)
    return _edge_assemble(mesh, tr, K)


def consistency2_broken(mesh):
    """``M[i, j] = sum_E int [d_nu phi_i] <Lap phi_j>`` (dG II)."""
    tr = _traces(mesh, quad_edge(2))
    h = mesh.edge_lengths[:, None, None]
    lap = tr.hess[..., 0, 0] + tr.hess[..., 1, 1]  # (2, ne, 6)
    avg = tr.average(lap[:, :, None, :])[:, 0]  # (ne, 12)
    Jn = _dn(tr, mesh)
    K = h * np.einsum("q,eqa,eb->eab", tr.w, Jn, avg, optimize=True)
    return _edge_assemble(mesh, tr, K)


def broken_form(mesh, scheme: SchemeConfig):
    """Bilinear form of ``scheme`` on broken P2."""
    k = scheme.kind
    if k == "morley":
        return apw_broken(mesh)
    if k == "wopsip":
        return apw_broken(mesh) + cp_broken(mesh)
    if k == "dg1":
        M = consistency_broken(mesh)
        pen = cdg_broken(mesh, scheme.sigma1, scheme.sigma2)
        return apw_broken(mesh) - scheme.theta * M.T - M + pen
    if k == "c0ip":
        M = consistency_broken(mesh)
        pen = cdg_broken(mesh, scheme.sigma1, scheme.sigma_ip, values=False)
        return apw_broken(mesh) - scheme.theta * M.T - M + pen
    if k == "dg2":
        M = consistency2_broken(mesh)
        pen = cdg_broken(mesh, scheme.sigma1, scheme.sigma2)
        return laplace_broken(mesh) - scheme.theta * M.T - M + pen
    raise ValueError(f"unknown scheme {k!r}")


def assemble_a(scheme: SchemeConfig, dofs):
    """Sparse matrix of ``a_h`` on the scheme's space."""
    key = ("a_h", scheme.kind, scheme.theta, scheme.sigma1, scheme.sigma2, scheme.sigma_ip)

    def build():
        A = dofs.B.T @ broken_form(dofs.mesh, scheme) @ dofs.B
        A = sp.csr_matrix(A)
        A.sum_duplicates()
        A.eliminate_zeros()
        return A
    return dofs.mesh.cached(key, build)


def h_norm_matrix(dofs):
    """Matrix of ``|||.|||_pw^2 + j_h`` on the space ``dofs``."""
    mesh = dofs.mesh
    return mesh.cached(("hnorm", dofs.kind), lambda: sp.csr_matrix(
        dofs.B.T @ (apw_broken(mesh) + jh_broken(mesh)) @ dofs.B))


def jh_form(v: DiscreteFunction, w: DiscreteFunction):
    bv, bw = v.dofs.B @ v.coeffs, w.dofs.B @ w.coeffs
    return float(bw @ (jh_broken(v.mesh) @ bv))


def h_norm(v: DiscreteFunction):
    b = v.dofs.B @ v.coeffs
    M = apw_broken(v.mesh) + jh_broken(v.mesh)
    return float(np.sqrt(max(b @ (M @ b), 0.0)))


def dg_norm(v: DiscreteFunction, sigma1=20.0, sigma2=20.0):
    b = v.dofs.B @ v.coeffs
    M = apw_broken(v.mesh) + cdg_broken(v.mesh, sigma1, sigma2)
    return float(np.sqrt(max(b @ (M @ b), 0.0)))


def p_norm(v: DiscreteFunction):
    b = v.dofs.B @ v.coeffs
    M = apw_broken(v.mesh) + cp_broken(v.mesh)
    return float(np.sqrt(max(b @ (M @ b), 0.0)))


def export_coo(A, path):
    """Write ``row col value`` lines (0-based) of a sparse matrix."""
    C = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(C.row, C.col, C.data):
            fh.write(f"{i} {j} {v:.17g}\n")


# ----------------------------------------------------------------------
# pointwise trilinear ingredients


def vk_bracket(Heta, Hchi):
    """Von Karman bracket from Hessians of shape (..., 2, 2)."""
    return (Heta[..., 0, 0] * Hchi[..., 1, 1] + Heta[..., 1, 1] * Hchi[..., 0, 0]
            - 2.0 * Heta[..., 0, 1] * Hchi[..., 0, 1])


def curl(g):
    """``Curl chi = (chi_y, -chi_x)`` from gradients (..., 2)."""
    return np.stack([g[..., 1], -g[..., 0]], axis=-1)


def _field_tables(mesh, fields, degree=6):
    rule = split_rule(degree)
    origin, B, _ = mesh._maps
    nt, nq = mesh.n_triangles, len(rule)
    X = origin[:, None, :] + np.einsum("tij,qj->tqi", B, rule.points)
    W = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
    tri = np.repeat(np.arange(nt), nq)
    out = []
    for f, orders in fields:
        out.append([np.asarray(f.eval(tri, X.reshape(-1, 2), o)).reshape((nt, nq) + ((2,) * o))
                    for o in orders])
    return W, out


def trilinear_nse(mesh, eta, chi, phi, degree=6):
    """``sum_T int Lap(eta) (chi_y phi_x - chi_x phi_y)`` for evaluable fields."""
    from .transfer import as_field
    W, ((He,), (gc,), (gp,)) = _field_tables(
        mesh, [(as_field(eta), (2,)), (as_field(chi), (1,)), (as_field(phi), (1,))], degree)
    lap = He[..., 0, 0] + He[..., 1, 1]
    return float(np.sum(W * lap * np.einsum("tqi,tqi->tq", curl(gc), gp)))


def trilinear_vke(mesh, xi, th, phi, which=1, degree=6):
    """``Gamma_1 = -int [xi, th] phi`` (which=1) or ``Gamma_2 = +1/2 int [xi, th] phi``."""
    from .transfer import as_field
    W, ((Hx,), (Ht,), (vp,)) = _field_tables(
        mesh, [(as_field(xi), (2,)), (as_field(th), (2,)), (as_field(phi), (0,))], degree)
    val = float(np.sum(W * vk_bracket(Hx, Ht) * vp))
    return -val if which == 1 else 0.5 * val


# ----------------------------------------------------------------------
# sources


@dataclass
class SourceTerm:
    """Load ``F(v) = int f0 v + f1 . grad v + f2 : D^2 v + sum lam v(zeta)``.

    The fields are callables on point arrays (..., 2) returning (...),
    (..., 2) and (..., 2, 2); ``None`` means zero.  ``singular`` names a
    point where the data may be singular so that adjacent triangles get
    graded quadrature.
    """

    f0: object = None
    f1: object = None
    f2: object = None
    point_loads: list = field(default_factory=list)
    k: int = 1
    degree: int = 8
    singular: object = None

    @property
    def has_volume(self):
        return any(f is not None for f in (self.f0, self.f1, self.f2))

    def is_zero(self):
        return not self.has_volume and all(lam == 0 for _, lam in self.point_loads)


def _point_groups(xh):
    """Group point indices by HCT subtriangle (harmless for P2)."""
    sub = hct_subtriangle(xh)
    return [np.flatnonzero(sub == s) for s in range(3) if np.any(sub == s)]


def _test_volume(mesh, rep: LocalRep, tris, xh, W, f0v, f1v, f2v):
    """Local load vectors (len(tris), nloc) of a volume functional."""
    loc = np.zeros((len(tris), rep.nloc))
    for g in _point_groups(xh):
        idx, val, grad, hess = rep.tables(mesh, xh[g], tris)
        cols = idx[0]
        acc = 0.0
        if f0v is not None:
            acc = acc + np.einsum("tq,tq,qa->ta", W[:, g], f0v[:, g], val, optimize=True)
        if f1v is not None:
            acc = acc + np.einsum("tq,tqi,tqai->ta", W[:, g], f1v[:, g], grad, optimize=True)
        if f2v is not None:
            acc = acc + np.einsum("tq,tqij,tqaij->ta", W[:, g], f2v[:, g], hess, optimize=True)
        loc[:, cols] += acc
    return loc


def source_local(mesh, F: SourceTerm, rep: LocalRep):
    """Local load vectors (ntri, nloc) of ``F`` tested with ``rep``'s basis."""
    loc = np.zeros((mesh.n_triangles, rep.nloc))
    if F.has_volume:
        rule = cell_rule(mesh, F.degree, F.singular)
        for gi, (tris, r) in enumerate(rule.groups):
            X, W = rule.physical(mesh, gi)
            vals = [None if f is None else np.asarray(f(X)) for f in (F.f0, F.f1, F.f2)]
            loc[tris] += _test_volume(mesh, rep, tris, r.points, W, *vals)
    for zeta, lam in F.point_loads:
        zeta = np.asarray(zeta, dtype=float)
        tris = mesh.locate(zeta)
        if tris.size == 0:
            raise ValueError(f"point load at {zeta} lies outside the domain")
        xh = mesh.to_reference(tris, np.repeat(zeta[None, :], tris.size, axis=0))
        for t, x in zip(tris, xh):
            idx, val, _, _ = rep.tables(mesh, x[None, :], np.array([t]))
            loc[t, idx[0]] += lam / tris.size * val[0]
    return loc


def assemble_source(F: SourceTerm, scheme: SchemeConfig, dofs):
    """Load vector ``F(Q phi_i)`` with ``Q`` the scheme's ``smoother_SQ``."""
    rep = smoother_rep(dofs, scheme.smoother_SQ)
    if F.is_zero():
        return np.zeros(dofs.ndof)
    return rep.M.T @ source_local(dofs.mesh, F, rep).ravel()


# ----------------------------------------------------------------------
# the discrete nonlinear system


@dataclass(frozen=True)
class Problem:
    """Which semilinear problem is solved and with which load."""

    kind: str
    source: SourceTerm

    def __post_init__(self):
        if self.kind not in PROBLEMS:
            raise ValueError(f"problem: unknown kind {self.kind!r}")

    @property
    def ncomp(self):
        return 2 if self.kind == "vke" else 1


class NonlinearSystem:
    """``N_h(u) = a_h(u, .) + Gamma_pw(Ru, Ru, S.) - F(Q.)`` on one mesh.

    For the von Karman problem the state stacks ``(u1, u2)``.
    """

    def __init__(self, mesh, scheme: SchemeConfig, problem: Problem, quad_degree=5):
        # With P2 smoothers the trilinear integrands are quadratic, so a
        # degree-2 rule is exact; HCT pieces need the split rule.
        self.mesh, self.scheme, self.problem = mesh, scheme, problem
        self.dofs = build_dofmap(mesh, scheme.kind)
        self.n = self.dofs.ndof
        self.A = assemble_a(scheme, self.dofs)
        self.F = assemble_source(problem.source, scheme, self.dofs)
        self.R = smoother_rep(self.dofs, scheme.smoother_R)
        self.S = smoother_rep(self.dofs, scheme.smoother_SQ)
        plain = self.R.kind == "p2" and self.S.kind == "p2"
        rule = quad_triangle(2) if plain else split_rule(quad_degree)
        groups = [np.arange(len(rule))] if plain else _point_groups(rule.points)
        self._groups = []
        W = 2.0 * mesh.areas[:, None] * rule.weights[None, :]
        for g in groups:
            xh = rule.points[g]
            iR, _, gR, hR = self.R.tables(mesh, xh)
            iS, vS, gS, _ = self.S.tables(mesh, xh)
            self._groups.append(dict(W=W[:, g], iR=iR[0], gR=gR, hR=np.ascontiguousarray(hR),
                                     iS=iS[0], vS=vS, gS=gS))

    # -- helpers ---------------------------------------------------------
    @property
    def size(self):
        return self.problem.ncomp * self.n

    def split(self, c):
        c = np.asarray(c, dtype=float)
        return (c,) if self.problem.ncomp == 1 else (c[:self.n], c[self.n:])

    def matrix(self):
        """Linear part: ``a_h`` (block diagonal for the von Karman system)."""
        if self.problem.ncomp == 1:
            return self.A
        return sp.block_diag([self.A, self.A], format="csr")

    def load(self):
        if self.problem.ncomp == 1:
            return self.F
        return np.concatenate([self.F, np.zeros(self.n)])

    def _local_R(self, c):
        return self.R.local(c)

    def _blockdiag(self, K):
        nt, a, b = K.shape
        r = np.broadcast_to(a * np.arange(nt)[:, None, None] + np.arange(a)[None, :, None], K.shape)
        cc = np.broadcast_to(b * np.arange(nt)[:, None, None] + np.arange(b)[None, None, :], K.shape)
        return sp.csr_matrix((K.ravel(), (r.ravel(), cc.ravel())), shape=(nt * a, nt * b))

    # -- nonlinearity ----------------------------------------------------
    def gamma(self, c):
        """Vector of ``Gamma_pw(Ru, Ru, S phi_i)`` (stacked for VKE)."""
        nt = self.mesh.n_triangles
        if self.problem.kind == "biharmonic":
            return np.zeros(self.size)
        if self.problem.kind == "nse":
            C = self._local_R(c)
            loc = np.zeros((nt, self.S.nloc))
            for G in self._groups:
                cR = C[:, G["iR"]]
                g = np.einsum("tqai,ta->tqi", G["gR"], cR)
                H = np.einsum("tqaij,ta->tqij", G["hR"], cR)
                lap = H[..., 0, 0] + H[..., 1, 1]
                vec = G["W"][..., None] * lap[..., None] * curl(g)
                loc[:, G["iS"]] += np.einsum("tqi,tqai->ta", vec, G["gS"])
            return self.S.M.T @ loc.ravel()
        c1, c2 = self.split(c)
        C1, C2 = self._local_R(c1), self._local_R(c2)
        l1 = np.zeros((nt, self.S.nloc))
        l2 = np.zeros((nt, self.S.nloc))
        for G in self._groups:
            H1 = np.einsum("tqaij,ta->tqij", G["hR"], C1[:, G["iR"]])
            H2 = np.einsum("tqaij,ta->tqij", G["hR"], C2[:, G["iR"]])
            l1[:, G["iS"]] -= np.einsum("tq,qa->ta", G["W"] * vk_bracket(H1, H2), G["vS"])
            l2[:, G["iS"]] += 0.5 * np.einsum("tq,qa->ta", G["W"] * vk_bracket(H1, H1), G["vS"])
        return np.concatenate([self.S.M.T @ l1.ravel(), self.S.M.T @ l2.ravel()])

    def gamma_jacobian(self, c):
        nt = self.mesh.n_triangles
        nS, nR = self.S.nloc, self.R.nloc
        if self.problem.kind == "biharmonic":
            return sp.csr_matrix((self.size, self.size))
        if self.problem.kind == "nse":
            C = self._local_R(c)
            K = np.zeros((nt, nS, nR))
            for G in self._groups:
                iR, iS = G["iR"], G["iS"]
                cR = C[:, iR]
                g = np.einsum("tqai,ta->tqi", G["gR"], cR)
                H = np.einsum("tqaij,ta->tqij", G["hR"], cR)
                lap = H[..., 0, 0] + H[..., 1, 1]
                lapB = G["hR"][..., 0, 0] + G["hR"][..., 1, 1]  # (nt, nq, nR)
                W = G["W"]
                cu = curl(g)
                # d/du of Lap(Ru): Lap(psi_b) Curl(Ru) . grad(psi_a)
                t1 = np.einsum("tq,tqb,tqi,tqai->tab", W, lapB, cu, G["gS"], optimize=True)
                # d/du of Curl(Ru): Lap(Ru) Curl(psi_b) . grad(psi_a)
                t2 = np.einsum("tq,tqbi,tqai->tab", W * lap, curl(G["gR"]), G["gS"], optimize=True)
                K[:, iS[:, None], iR[None, :]] += t1 + t2
            return (self.S.M.T @ self._blockdiag(K) @ self.R.M).tocsr()
        c1, c2 = self.split(c)
        C1, C2 = self._local_R(c1), self._local_R(c2)
        K12 = np.zeros((nt, nS, nR))  # int [psi_b, Ru1] psi_a
        K22 = np.zeros((nt, nS, nR))  # int [psi_b, Ru2] psi_a
        for G in self._groups:
            iR, iS = G["iR"], G["iS"]
            H1 = np.einsum("tqaij,ta->tqij", G["hR"], C1[:, iR])
            H2 = np.einsum("tqaij,ta->tqij", G["hR"], C2[:, iR])
            hb = G["hR"]
            b1 = vk_bracket(hb, H1[:, :, None])  # (nt, nq, nR)
            b2 = vk_bracket(hb, H2[:, :, None])
            blk = (iS[:, None], iR[None, :])
            K12[:, blk[0], blk[1]] += np.einsum("tq,tqb,qa->tab", G["W"], b1, G["vS"],
                                                optimize=True)
            K22[:, blk[0], blk[1]] += np.einsum("tq,tqb,qa->tab", G["W"], b2, G["vS"],
                                                optimize=True)
        St, Rm = self.S.M.T, self.R.M
        B1 = St @ self._blockdiag(K12) @ Rm
        B2 = St @ self._blockdiag(K22) @ Rm
        return sp.bmat([[-B2, -B1], [B1, None]], format="csr")

    # -- residual and Jacobian --------------------------------------------
    def residual(self, c):
        return self.matrix() @ c + self.gamma(c) - self.load()

    def jacobian(self, c):
        return (self.matrix() + self.gamma_jacobian(c)).tocsr()

    def functions(self, c):
        return tuple(DiscreteFunction(self.dofs, ci) for ci in self.split(c))


def assemble_residual(u, F, scheme, problem):
    """Residual vector of ``N_h`` at ``u`` (a DiscreteFunction or a pair)."""
    sysm, c = _system_and_state(u, F, scheme, problem)
    return sysm.residual(c)


def assemble_jacobian(u, F, scheme, problem):
    sysm, c = _system_and_state(u, F, scheme, problem)
    return sysm.jacobian(c)


def _system_and_state(u, F, scheme, problem):
    parts = u if isinstance(u, (tuple, list)) else (u,)
    kind = problem if isinstance(problem, str) else problem.kind
    prob = Problem(kind, F)
    sysm = NonlinearSystem(parts[0].mesh, scheme, prob)
    return sysm, np.concatenate([p.coeffs for p in parts])
