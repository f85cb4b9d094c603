import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from plate_afem.psi import SeparationError, build_psi, jacobi, jacobi_center_value, psi_degree

from conftest import lshape

ZETA = np.array([-1.0 / 6.0, -1.0 / 6.0])


def edge_through(mesh, z):
    A = mesh.vertices[mesh.edges[:, 0]]
    B = mesh.vertices[mesh.edges[:, 1]]
    cross = (B - A)[:, 0] * (z - A)[:, 1] - (B - A)[:, 1] * (z - A)[:, 0]
    s = np.einsum("ei,ei->e", z - A, B - A) / mesh.edge_lengths ** 2
    return int(np.flatnonzero(mesh.interior_edges & (np.abs(cross) < 1e-12)
                              & (s > 1e-9) & (s < 1 - 1e-9))[0])


@pytest.mark.parametrize("n", range(6))
def test_center_value_against_sympy(n):
    t = sp.symbols("t")
    assert jacobi_center_value(n) == pytest.approx(float(sp.jacobi(2 * n, 4, 4, 0)), rel=1e-14)
    coeffs = sp.Poly(sp.expand(sp.jacobi(2 * n, 4, 4, t)), t).all_coeffs()[::-1]
    assert np.allclose(jacobi(2 * n, 4, 4).coef, [float(c) for c in coeffs], rtol=1e-12)


def test_first_center_value():
    assert jacobi_center_value(1) == -1.5


def test_jacobi_weighted_orthogonality():
    x = np.polynomial.legendre.leggauss(30)
    t, w = x
    wt = w * (1 - t) ** 4 * (1 + t) ** 4
    P = [jacobi(k, 4, 4)(t) for k in range(7)]
    G = np.array([[wt @ (a * b) for b in P] for a in P])
    assert np.allclose(G - np.diag(np.diag(G)), 0.0, atol=1e-12)


@pytest.mark.parametrize("k,n", [(0, 1), (1, 1), (2, 2), (3, 2), (4, 3)])
def test_psi_degree(k, n):
    assert psi_degree(k) == n
    assert 2 * psi_degree(k) > k


@given(st.floats(0.2, 0.8), st.integers(0, 2))
def test_psi_properties_for_points_along_an_edge(t, k):
    m = lshape(2)
    E = int(np.flatnonzero(m.interior_edges)[4])
    A, B = m.vertices[m.edges[E]]
    z = A + t * (B - A)
    psi = build_psi(m, E, z, k)
    assert psi(z[None])[0] == pytest.approx(1.0, abs=1e-12)
    res = psi.orthogonality_residuals()
    assert max(res.values()) < 1e-9


def test_psi_vanishes_on_the_patch_boundary():
    m = lshape(3)
    E = edge_through(m, ZETA)
    psi = build_psi(m, E, ZETA, 1)
    for T in psi.tris:
        tri = m.triangles[T]
        for i in range(3):
            a, b = m.vertices[tri[i]], m.vertices[tri[(i + 1) % 3]]
            if {tri[i], tri[(i + 1) % 3]} == set(m.edges[E]):
                continue
            X = a + np.linspace(0, 1, 9)[:, None] * (b - a)
            assert np.abs(psi(X)).max() < 1e-12
            assert np.abs(psi(X, 1)).max() < 1e-10
    far = np.array([[0.9, -0.9], [-0.9, 0.9]])
    assert np.all(psi(far) == 0)


def test_psi_is_c1_across_the_edge():
    m = lshape(2)
    E = edge_through(m, ZETA)
    psi = build_psi(m, E, ZETA, 2)
    A, B = m.vertices[m.edges[E]]
    X = A + np.linspace(0.05, 0.95, 11)[:, None] * (B - A)
    assert np.allclose(psi.evaluate(0, X, 0), psi.evaluate(1, X, 0), atol=1e-12)
    assert np.allclose(psi.evaluate(0, X, 1), psi.evaluate(1, X, 1), atol=1e-10)


def test_scaled_h2_seminorm_is_level_independent():
    vals = []
    for level in (3, 4, 5):
        m = lshape(level)
        psi = build_psi(m, edge_through(m, ZETA), ZETA, 1)
        vals.append(psi.h2_seminorm() * np.sqrt(m.areas[m.locate(ZETA)]).min())
    assert max(vals) / min(vals) <= 2.0


def test_separation_errors():
    m = lshape(2)
    E = int(np.flatnonzero(m.interior_edges)[0])
    A, B = m.vertices[m.edges[E]]
    with pytest.raises(SeparationError):
        build_psi(m, E, A + 0.01 * (B - A), 0)
    with pytest.raises(SeparationError):
        build_psi(m, E, A + 0.5 * (B - A) + 1e-3 * m.normals[E], 0)
    Eb = int(np.flatnonzero(m.boundary_edges)[0])
    with pytest.raises(ValueError):
        build_psi(m, Eb, m.vertices[m.edges[Eb]].mean(axis=0), 0)
