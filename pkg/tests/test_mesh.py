import numpy as np
import pytest
from hypothesis import given, strategies as st

from plate_afem.bench import ZETA
from plate_afem.mesh import (ancestor_map, check_conforming, load_txt, make_lshape,
                             make_rectangle, refine, uniform_refine)

from conftest import lshape


def test_initial_lshape_counts():
    m = make_lshape()
    assert (m.n_vertices, m.n_triangles, m.n_edges) == (8, 6, 13)
    # Euler characteristic of a simply connected domain
    assert m.n_vertices - m.n_edges + m.n_triangles == 1
    assert m.interior_edges.sum() == 5
    assert m.boundary_vertices.all()
    assert np.isclose(m.areas.sum(), 3.0)


def test_initial_lshape_diagonals_parallel_to_main_diagonal():
    m = make_lshape()
    e = m.edges[m.tri_edges[:, 0]]
    d = m.vertices[e[:, 1]] - m.vertices[e[:, 0]]
    assert np.allclose(np.abs(d[:, 0]), np.abs(d[:, 1]))
    assert np.all(d[:, 0] * d[:, 1] > 0)
    # refinement edge is the hypotenuse, the longest edge
    assert np.allclose(m.edge_lengths[m.tri_edges[:, 0]], m.diameters)


def test_interior_normal_is_outward_normal_of_first_triangle(lshape_meshes):
    for m in lshape_meshes[:4]:
        inner = np.flatnonzero(m.interior_edges)
        mid = m.vertices[m.edges[inner]].mean(axis=1)
        cp = m.vertices[m.triangles[m.edge_tris[inner, 0]]].mean(axis=1)
        cm = m.vertices[m.triangles[m.edge_tris[inner, 1]]].mean(axis=1)
        nu = m.normals[inner]
        assert np.all(np.einsum("ei,ei->e", mid - cp, nu) > 0)
        assert np.all(np.einsum("ei,ei->e", cm - mid, nu) > 0)
        assert np.allclose(np.linalg.norm(nu, axis=1), 1.0)
        assert np.allclose(np.einsum("ei,ei->e", nu, m.tangents[inner]), 0.0)


def test_boundary_normals_point_outside(lshape_meshes):
    m = lshape_meshes[3]
    bnd = np.flatnonzero(m.boundary_edges)
    mid = m.vertices[m.edges[bnd]].mean(axis=1)
    for x in mid + 1e-6 * m.normals[bnd]:
        assert not m.contains(x)
    for x in mid - 1e-6 * m.normals[bnd]:
        assert m.contains(x)


def test_edge_patch():
    m = make_lshape()
    b = int(np.flatnonzero(m.boundary_edges)[0])
    i = int(np.flatnonzero(m.interior_edges)[0])
    assert m.edge_patch(b)[1] is None
    tp, tm = m.edge_patch(i)
    assert tm is not None and tp != tm


@given(st.lists(st.integers(0, 10_000), min_size=1, max_size=8), st.integers(1, 5))
def test_random_refinement_stays_conforming(seeds, rounds):
    m = make_lshape()
    rng = np.random.default_rng(seeds[0])
    for _ in range(rounds):
        k = rng.integers(1, m.n_triangles + 1)
        parent = m
        m = refine(m, rng.choice(m.n_triangles, size=k, replace=False))
        check_conforming(m)
        assert np.isclose(m.areas.sum(), 3.0)
        # children tile their parents
        per_parent = np.bincount(m.parent, weights=m.areas, minlength=parent.n_triangles)
        assert np.allclose(per_parent, parent.areas)
        # NVB on right-isosceles triangles produces only similar triangles
        assert np.isclose(m.min_angle(), np.pi / 4)


def test_marked_triangles_are_bisected():
    m = lshape(2)
    m2 = refine(m, [3])
    assert np.sum(m2.parent == 3) >= 2
    assert np.all(m2.level[m2.parent == 3] >= m.level[3] + 1)


def test_uniform_refine_bisects_everything():
    m = lshape(1)
    m2 = uniform_refine(m)
    assert m2.n_triangles == 2 * m.n_triangles
    assert np.all(np.bincount(m2.parent) == 2)


def test_ancestor_map_and_empty_marking():
    ms = [make_lshape()]
    for _ in range(3):
        ms.append(uniform_refine(ms[-1]))
    anc = ancestor_map(ms)
    assert np.allclose(np.bincount(anc, weights=ms[-1].areas), ms[0].areas)
    same = refine(ms[1], [])
    assert np.array_equal(same.triangles, ms[1].triangles)
    with pytest.raises(IndexError):
        refine(ms[0], [6])


def test_centroid_lies_on_an_edge_at_one_third():
    """From level 1 on the point load position splits an interior edge 1:2."""
    zeta = np.array(ZETA)
    m = make_lshape()
    for level in range(9):
        A = m.vertices[m.edges[:, 0]]
        B = m.vertices[m.edges[:, 1]]
        t = np.einsum("ei,ei->e", zeta - A, B - A) / m.edge_lengths ** 2
        foot = A + t[:, None] * (B - A)
        on = (np.linalg.norm(foot - zeta, axis=1) < 1e-13) & (t > 0) & (t < 1)
        assert on.sum() == 1
        e = int(np.flatnonzero(on)[0])
        expected = 1.0 / 6.0 if level == 0 else 1.0 / 3.0
        assert np.isclose(min(t[e], 1 - t[e]), expected)
        assert m.interior_edges[e]
        m = uniform_refine(m)


def test_rectangle_and_roundtrip(tmp_path):
    m = make_rectangle(0, 2, 0, 1, 2, 1)
    assert m.n_triangles == 4 and np.isclose(m.areas.sum(), 2.0)
    check_conforming(m)
    p = tmp_path / "m.txt"
    m.save_txt(p)
    m2 = load_txt(p)
    assert np.array_equal(m2.triangles, m.triangles)
    assert np.array_equal(m2.vertices, m.vertices)


def test_clockwise_triangle_rejected():
    from plate_afem.mesh import Triangulation
    with pytest.raises(ValueError):
        Triangulation(np.array([[0, 0], [0, 1], [1, 0.0]]), np.array([[0, 1, 2]]), np.zeros(1))
