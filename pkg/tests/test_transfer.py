import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from plate_afem.mesh import make_lshape, refine
from plate_afem.space import DiscreteFunction, SchemeConfig, build_dofmap, dg_function, interpolate_p2
from plate_afem.transfer import (ExactField, companion, embedding_matrix, ic_transfer,
                                 l2_project, morley_interpolate, prolong)
from plate_afem.integrate import cell_rule
from plate_afem import verify

from conftest import lshape

x, y = sp.symbols("x y")
G = x ** 3 * y - 2 * x * y ** 2 + sp.sin(x + 2 * y)
g_num = sp.lambdify((x, y), G)
g_grad = [sp.lambdify((x, y), sp.diff(G, s)) for s in (x, y)]


def exact_field():
    def fn(X, order):
        if order == 0:
            return g_num(X[:, 0], X[:, 1])
        return np.column_stack([gg(X[:, 0], X[:, 1]) for gg in g_grad])
    return ExactField(fn)


def random_mesh(seed, rounds=3):
    rng = np.random.default_rng(seed)
    m = make_lshape()
    for _ in range(rounds):
        m = refine(m, rng.choice(m.n_triangles, size=max(1, m.n_triangles // 3), replace=False))
    return m


def test_morley_interpolation_dofs_against_sympy():
    m = lshape(1)
    v = morley_interpolate(m, exact_field())
    dm = v.dofs
    for V in np.flatnonzero(~m.boundary_vertices):
        assert v.coeffs[dm.vertex_dof[V]] == pytest.approx(float(G.subs({x: m.vertices[V, 0],
                                                                          y: m.vertices[V, 1]})))
    t = sp.symbols("t")
    for E in np.flatnonzero(m.interior_edges):
        A, B = (sp.Matrix([sp.nsimplify(c) for c in m.vertices[i]]) for i in m.edges[E])
        nu = m.normals[E]
        P = A + t * (B - A)
        dn = (sp.diff(G, x) * nu[0] + sp.diff(G, y) * nu[1]).subs({x: P[0], y: P[1]})
        mean = float(sp.Integral(dn, (t, 0, 1)).evalf(30))
        assert v.coeffs[dm.edge_dof[E]] == pytest.approx(mean, rel=1e-10, abs=1e-12)


@given(st.integers(0, 10_000))
def test_right_inverse_random_meshes(seed):
    chk = verify.check_right_inverse(random_mesh(seed), samples=3, seed=seed)
    assert chk.ok, chk.line()


@given(st.integers(0, 10_000))
def test_orthogonality_random_meshes(seed):
    chk = verify.check_orthogonality(random_mesh(seed), samples=3, seed=seed)
    assert chk.ok, chk.line()


@given(st.integers(0, 10_000))
def test_companion_conformity_random_meshes(seed):
    chk = verify.check_companion_conformity(random_mesh(seed), samples=2, seed=seed)
    assert chk.ok, chk.line()


def test_companion_vanishes_on_boundary(rng):
    m = lshape(2)
    w = companion(verify.random_morley(m, rng))
    bnd = np.flatnonzero(m.boundary_edges)
    A = m.vertices[m.edges[bnd, 0]]
    B = m.vertices[m.edges[bnd, 1]]
    for t in (0.1, 0.5, 0.77):
        X = A + t * (B - A)
        tri = m.edge_tris[bnd, 0]
        assert np.abs(w.eval(tri, X, 0)).max() < 1e-13
        assert np.abs(w.eval(tri, X, 1)).max() < 1e-12


def test_morley_interpolation_is_projection(rng):
    m = lshape(2)
    v = verify.random_morley(m, rng)
    w = morley_interpolate(m, v)
    assert np.allclose(w.coeffs, v.coeffs, atol=1e-12)


def test_ic_transfer_averages(rng):
    m = lshape(2)
    U = rng.standard_normal((m.n_triangles, 6))
    w = ic_transfer(dg_function(m, U))
    E = int(np.flatnonzero(m.interior_edges)[3])
    tp, tm = m.edge_patch(E)
    p = m.vertices[m.edges[E]].mean(axis=0)
    avg = 0.5 * (dg_function(m, U).eval(tp, p) + dg_function(m, U).eval(tm, p))
    T = tp
    assert w.eval(T, p) == pytest.approx(avg)
    # boundary values are zero
    Eb = int(np.flatnonzero(m.boundary_edges)[0])
    assert w.eval(m.edge_tris[Eb, 0], m.vertices[m.edges[Eb]].mean(axis=0)) == pytest.approx(0, abs=1e-14)


def test_embedding_is_exact():
    c = lshape(1)
    f = lambda X: X[:, 0] ** 2 - X[:, 0] * X[:, 1] + 2 * X[:, 1]
    U = interpolate_p2(c, f)
    fine = refine(c, [0, 3, 5])
    W = (embedding_matrix(c, fine) @ U.ravel()).reshape(-1, 6)
    assert np.allclose(W, interpolate_p2(fine, f))
    with pytest.raises(ValueError):
        embedding_matrix(fine, c)


@pytest.mark.parametrize("kind", ["dg1", "dg2", "wopsip"])
def test_dg_prolongation_keeps_the_function(kind, rng):
    c = lshape(1)
    dm = build_dofmap(c, kind)
    u = DiscreteFunction(dm, rng.standard_normal(dm.ndof))
    fine = refine(c, [1, 2])
    v = prolong(u, fine, SchemeConfig(kind))
    for T in range(fine.n_triangles):
        p = fine.vertices[fine.triangles[T]].mean(axis=0)
        assert v.eval(T, p) == pytest.approx(u.eval(fine.parent[T], p))


def test_l2_projection():
    m = lshape(1)
    rule = cell_rule(m, 6)
    P0 = l2_project(m, lambda X: X[..., 0] * X[..., 1], 0, rule)
    T = 2
    P = [sp.Matrix([sp.nsimplify(c) for c in v]) for v in m.vertices[m.triangles[T]]]
    u, w = sp.symbols("u w")
    X = P[0] + u * (P[1] - P[0]) + w * (P[2] - P[0])
    mean = 2 * sp.integrate(sp.integrate(X[0] * X[1], (w, 0, 1 - u)), (u, 0, 1))
    c = m.vertices[m.triangles[T]].mean(axis=0)
    assert P0(np.array([T]), c[None])[0] == pytest.approx(float(mean))
    lin = lambda X: 3 - X[..., 0] + 2 * X[..., 1]
    P1 = l2_project(m, lin, 1, rule)
    pts = np.array([[-0.5, -0.4]])
    T = m.locate(pts[0])[0]
    assert P1(np.array([T]), pts)[0] == pytest.approx(lin(pts)[0])
    assert np.allclose(P1.gradient_coef(), [-1, 2])
    with pytest.raises(ValueError):
        l2_project(m, lin, 2, rule)
