import numpy as np
import pytest

from plate_afem.afem import AdaptConfig, adapt_loop, fit_slope
from plate_afem.bench import ZETA, biharmonic_problem, nse_grisvard_problem, vke_pointload_problem
from plate_afem.estimate import (COMPONENTS, SeparationWarning, estimate, eta_jump,
                                 oscillation, point_load_indicator)
from plate_afem.forms import NonlinearSystem, SourceTerm, jh_form
from plate_afem.mesh import make_rectangle, uniform_refine
from plate_afem.quadrature import split_rule
from plate_afem.solve import newton_solve
from plate_afem.space import SchemeConfig, dg_function, interpolate_p2, p2_eval_local
from plate_afem.transfer import companion
from plate_afem.verify import random_morley

from conftest import lshape


def solved(level=3, kind="morley", problem=None, SQ="id"):
    bench = problem or nse_grisvard_problem()
    s = NonlinearSystem(lshape(level), SchemeConfig(kind, smoother_SQ=SQ), bench.problem)
    rep = newton_solve(s, np.zeros(s.size))
    return bench, s, s.functions(rep.solution)


def test_report_structure(tmp_path):
    bench, s, parts = solved()
    est = estimate(parts, bench.problem.source, s.scheme, "nse")
    assert set(est.components) == set(COMPONENTS)
    for c in COMPONENTS:
        assert est.components[c].shape == (s.mesh.n_triangles,)
        assert np.all(est.components[c] >= 0)
    assert est.sigma == pytest.approx(np.sqrt(sum(est.components[c].sum() for c in COMPONENTS)))
    assert est.components["point_load"].sum() == 0
    p = tmp_path / "e.csv"
    est.to_csv(p)
    lines = p.read_text().splitlines()
    assert len(lines) == s.mesh.n_triangles + 1
    assert lines[0].split(",")[-2:] == ["sigma2", "osc2"]


def test_smooth_quadratic_has_no_jump_indicators():
    m = lshape(2)
    v = dg_function(m, interpolate_p2(m, lambda X: X[:, 0] ** 2 - X[:, 0] * X[:, 1]))
    F = SourceTerm()
    est = estimate(v, F, SchemeConfig("dg1"), "biharmonic")
    inner = np.flatnonzero(m.interior_edges)
    # only boundary edges (where the trace itself is the jump) contribute
    assert est.components["hessian_normal_jump"].max() < 1e-24
    assert est.components["normal_jump"].max() < 1e-24
    bnd_tris = np.unique(m.edge_tris[m.boundary_edges, 0])
    tj = est.components["tangential_jump"]
    assert np.all(tj[np.setdiff1d(np.arange(m.n_triangles), bnd_tris)] < 1e-24)
    assert inner.size > 0


def test_c0ip_keeps_the_mean_of_the_normal_normal_jump():
    m = lshape(2)
    rng = np.random.default_rng(0)
    v = dg_function(m, rng.standard_normal((m.n_triangles, 6)))
    F = SourceTerm()
    full = estimate(v, F, SchemeConfig("c0ip"), "biharmonic").components["hessian_normal_jump"]
    mean_free = estimate(v, F, SchemeConfig("dg1"), "biharmonic").components["hessian_normal_jump"]
    # P2 Hessians are constant, so removing the edge mean kills the term
    assert mean_free.max() < 1e-20
    assert full.sum() > 1e-3


def test_point_load_indicator():
    m = lshape(3)
    pl = point_load_indicator([(ZETA, 2.0)], m)
    T = m.locate(np.array(ZETA))
    assert T.size == 2
    assert np.allclose(pl.mu2[T], 4.0 * m.areas[T])
    assert np.count_nonzero(pl.mu2) == 2
    assert pl.mu_zeta[0] == pytest.approx(2.0 * np.sqrt(m.areas[T]).min())
    assert not pl.warnings
    V = int(np.flatnonzero(~m.boundary_vertices)[0])
    at_vertex = point_load_indicator([(m.vertices[V], 1.0)], m)
    assert at_vertex.mu2.sum() == 0 and at_vertex.mu_zeta == [0.0]


def test_separation_warning():
    m = lshape(2)
    E = int(np.flatnonzero(m.interior_edges)[0])
    A, B = m.vertices[m.edges[E]]
    with pytest.warns(SeparationWarning):
        pl = point_load_indicator([(A + 0.02 * (B - A), 1.0)], m)
    assert pl.warnings


def test_oscillation():
    m = lshape(2)
    lin = SourceTerm(f0=lambda X: 1 + X[..., 0],
                     f1=lambda X: np.stack([X[..., 1], 2 + 0 * X[..., 0]], -1), k=1, degree=4)
    assert oscillation(lin, m)[1] < 1e-12
    quad = SourceTerm(f0=lambda X: X[..., 0] ** 2, k=1, degree=4)
    o1 = oscillation(quad, m)[1]
    o2 = oscillation(quad, uniform(m, 2))[1]
    # h^2 weight and O(h^2) projection error: |T|^2 h^2 per unit area gives rate h^4
    assert o2 < o1 / 3.5
    assert oscillation(vke_pointload_problem().problem.source, m)[1] == 0.0


def uniform(m, k):
    for _ in range(k):
        m = uniform_refine(m)
    return m


def test_eta_jump_against_companion_distance(rng):
    """The jump indicator is equivalent to the distance of v to its C1 companion."""
    m = lshape(3)
    for _ in range(5):
        v = random_morley(m, rng)
        ratio = eta_jump(v) / np.sqrt(_dist2(m, v, companion(v)))
        assert 0.1 <= ratio <= 10


def _dist2(m, v, Jv):
    """``||v - J v||_h^2`` via the broken Hessian of the HCT field (``j_h(Jv) = 0``)."""
    r = split_rule(2)
    origin, B, _ = m._maps
    X = origin[:, None, :] + np.einsum("tij,qj->tqi", B, r.points)
    tri = np.repeat(np.arange(m.n_triangles), len(r))
    xh = np.tile(r.points, (m.n_triangles, 1))
    Hv = p2_eval_local(m, v.broken(), tri, xh, 2)
    Hj = Jv.eval(tri, X.reshape(-1, 2), 2)
    W = (2 * m.areas[:, None] * r.weights[None, :]).ravel()
    return float(W @ np.sum((Hv - Hj) ** 2, axis=(1, 2))) + jh_form(v, v)


@pytest.mark.parametrize("kind,SQ", [("morley", "id"), ("dg1", "companion"), ("wopsip", "id")])
def test_efficiency_on_small_uniform_meshes(kind, SQ):
    bench = nse_grisvard_problem()
    h = adapt_loop(bench.problem, bench.mesh0, SchemeConfig(kind, smoother_SQ=SQ),
                   AdaptConfig(uniform=True, max_ndof=3000), exact=bench.exact)
    assert np.all((h.ef[-3:] > 1.0) & (h.ef[-3:] < 6.0))
    # the coarsest dG meshes are pre-asymptotic
    assert np.all(np.diff(h.error[-4:]) < 0)


def test_biharmonic_estimator_on_square_decays():
    bench = biharmonic_problem(1.0, make_rectangle(-1, 1, -1, 1, 2, 2))
    h = adapt_loop(bench.problem, bench.mesh0, SchemeConfig("morley"),
                   AdaptConfig(uniform=True, max_ndof=4000))
    # smooth solution: sigma ~ h ~ ndof^(-1/2)
    assert fit_slope(h.ndof, h.sigma, last=3) == pytest.approx(-0.5, abs=0.08)


def test_point_load_indicator_scales_with_area():
    m = lshape(3)
    mus = []
    for _ in range(4):
        mus.append(point_load_indicator([(ZETA, 1.0)], m).mu_zeta[0])
        m = uniform_refine(m)
    assert np.allclose(np.array(mus[1:]) / mus[:-1], 2 ** -0.5)


def test_volume_term_scaling_for_constant_load():
    m = lshape(2)
    bench = biharmonic_problem(3.0)
    vals = []
    for _ in range(3):
        v = dg_function(m, np.zeros((m.n_triangles, 6)))
        vals.append(estimate(v, bench.problem.source, SchemeConfig("dg1"),
                             "biharmonic").components["volume"].sum())
        m = uniform(m, 2)
    # two bisections halve h, so the f0 part of sigma drops by 1/4 (squared: 1/16)
    assert np.allclose(np.array(vals[1:]) / vals[:-1], 1 / 16)
