import numpy as np
import pytest
import sympy as sp

from plate_afem import verify
from plate_afem.bench import ZETA, nse_grisvard_problem, vke_pointload_problem
from plate_afem.forms import (NonlinearSystem, Problem, SourceTerm, apw_broken, assemble_a,
                              assemble_source, curl, h_norm, h_norm_matrix, jh_broken,
                              trilinear_nse, trilinear_vke, vk_bracket)
from plate_afem.mesh import make_rectangle
from plate_afem.space import DiscreteFunction, SchemeConfig, build_dofmap, dg_function, interpolate_p2
from plate_afem.transfer import ExactField

from conftest import lshape

x, y = sp.symbols("x y")
SQUARES = [((-1, 0), (-1, 0)), ((0, 1), (-1, 0)), ((-1, 0), (0, 1))]


def lshape_integral(expr):
    return float(sum(sp.integrate(expr, (x, *a), (y, *b)) for a, b in SQUARES))


def sym_field(expr):
    f = sp.lambdify((x, y), expr)
    g = [sp.lambdify((x, y), sp.diff(expr, s)) for s in (x, y)]
    H = [[sp.lambdify((x, y), sp.diff(expr, s, t)) for t in (x, y)] for s in (x, y)]

    def fn(X, order):
        a, b = X[:, 0], X[:, 1]
        one = np.ones_like(a)
        if order == 0:
            return f(a, b) * one
        if order == 1:
            return np.column_stack([gi(a, b) * one for gi in g])
        return np.stack([np.column_stack([H[i][j](a, b) * one for j in range(2)])
                         for i in range(2)], axis=1)
    return ExactField(fn)


P = x ** 2 * y - x * y ** 2 + x ** 3
Q = x * y + y ** 3 - 2 * x ** 2
R = 1 + x - y ** 2


def test_apw_against_sympy():
    m = lshape(2)
    fa = lambda X: X[:, 0] ** 2 - 3 * X[:, 0] * X[:, 1]
    fb = lambda X: X[:, 1] ** 2 + X[:, 0]
    a = interpolate_p2(m, fa).ravel()
    b = interpolate_p2(m, fb).ravel()
    A = apw_broken(m)
    pa, pb = x ** 2 - 3 * x * y, y ** 2 + x
    hess = lambda p: sp.hessian(p, (x, y))
    exact = lshape_integral(sum(hess(pa)[i, j] * hess(pb)[i, j] for i in range(2) for j in range(2)))
    assert b @ (A @ a) == pytest.approx(exact)
    assert abs(a @ (A @ b) - b @ (A @ a)) < 1e-12


def test_trilinear_nse_against_sympy():
    m = lshape(1)
    lap = sp.diff(P, x, 2) + sp.diff(P, y, 2)
    exact = lshape_integral(lap * (sp.diff(Q, y) * sp.diff(R, x) - sp.diff(Q, x) * sp.diff(R, y)))
    val = trilinear_nse(m, sym_field(P), sym_field(Q), sym_field(R))
    assert val == pytest.approx(exact, rel=1e-12)


def test_trilinear_vke_against_sympy():
    m = lshape(1)
    br = sp.diff(P, x, 2) * sp.diff(Q, y, 2) + sp.diff(P, y, 2) * sp.diff(Q, x, 2) \
        - 2 * sp.diff(P, x, y) * sp.diff(Q, x, y)
    exact = lshape_integral(br * R)
    assert trilinear_vke(m, sym_field(P), sym_field(Q), sym_field(R), 1) == pytest.approx(-exact)
    assert trilinear_vke(m, sym_field(P), sym_field(Q), sym_field(R), 2) == pytest.approx(0.5 * exact)


def test_bracket_identities(rng):
    A = rng.standard_normal((20, 2, 2))
    A = A + np.swapaxes(A, 1, 2)
    B = rng.standard_normal((20, 2, 2))
    B = B + np.swapaxes(B, 1, 2)
    assert np.allclose(vk_bracket(A, B), vk_bracket(B, A))
    # [v, v] = 2 det D^2 v
    assert np.allclose(vk_bracket(A, A), 2 * np.linalg.det(A))
    g = rng.standard_normal((5, 2))
    assert np.allclose(np.einsum("ni,ni->n", curl(g), g), 0.0)


@pytest.mark.parametrize("kind", ["morley", "dg1", "dg2", "c0ip", "wopsip"])
def test_symmetric_schemes_give_symmetric_matrices(kind):
    dm = build_dofmap(lshape(2), kind)
    A = assemble_a(SchemeConfig(kind, theta=1.0), dm)
    assert abs(A - A.T).max() < 1e-10 * abs(A).max()
    if kind in ("dg1", "dg2", "c0ip"):
        N = assemble_a(SchemeConfig(kind, theta=-1.0), dm)
        assert abs(N - N.T).max() > 1e-3
        # the nonsymmetric variant keeps the symmetric part positive
        ev = np.linalg.eigvalsh((0.5 * (N + N.T)).toarray())
        assert ev.min() > 0


def test_h_norm_matrix_positive_definite():
    for kind in ("morley", "dg1", "c0ip"):
        H = h_norm_matrix(build_dofmap(lshape(1), kind)).toarray()
        assert np.linalg.eigvalsh(H).min() > 0


def test_jh_vanishes_on_morley(rng):
    chk = verify.check_jh_morley(lshape(3), samples=5, seed=7)
    assert chk.ok, chk.line()


def test_volume_source_against_sympy():
    m = lshape(2)
    F = SourceTerm(f0=lambda X: X[..., 0] * X[..., 1], k=1, degree=6)
    b = assemble_source(F, SchemeConfig("dg1"), build_dofmap(m, "dg1"))
    q = lambda X: 1 + X[:, 0] ** 2 - X[:, 1]
    val = b @ interpolate_p2(m, q).ravel()
    assert val == pytest.approx(lshape_integral(x * y * (1 + x ** 2 - y)))
    ones = b @ np.ones(b.size)
    assert ones == pytest.approx(lshape_integral(x * y))


def test_point_load_evaluates_test_function(rng):
    m = lshape(3)
    F = vke_pointload_problem().problem.source
    for kind in ("morley", "dg1", "c0ip"):
        dm = build_dofmap(m, kind)
        b = assemble_source(F, SchemeConfig(kind), dm)
        v = DiscreteFunction(dm, rng.standard_normal(dm.ndof))
        T = m.locate(np.array(ZETA))
        vals = [v.eval(t, np.array(ZETA)) for t in T]
        assert b @ v.coeffs == pytest.approx(np.mean(vals))


def test_divergence_and_strong_form_loads_agree_for_conforming_tests():
    """With a C1 smoother F(Qv) is the same for both forms of the load of a smooth plate."""
    m = make_rectangle(-1, 1, -1, 1, 4, 4)
    u = (x ** 2 - 1) ** 2 * (y ** 2 - 1) ** 2
    bil = sp.lambdify((x, y), sp.diff(u, x, 4) + 2 * sp.diff(u, x, 2, y, 2) + sp.diff(u, y, 4))
    H = sp.hessian(u, (x, y))
    Hf = sp.lambdify((x, y), H)
    strong = SourceTerm(f0=lambda X: bil(X[..., 0], X[..., 1]), degree=8)
    div = SourceTerm(f2=lambda X: np.moveaxis(np.array(Hf(X[..., 0], X[..., 1]), dtype=float)
                                              * np.ones((1, 1) + X.shape[:-1]), (0, 1), (-2, -1)),
                     degree=8)
    for kind in ("morley", "dg1", "c0ip"):
        sc = SchemeConfig(kind, smoother_SQ="companion")
        dm = build_dofmap(m, kind)
        b1 = assemble_source(strong, sc, dm)
        b2 = assemble_source(div, sc, dm)
        assert np.abs(b1 - b2).max() < 1e-10 * np.abs(b1).max()


@pytest.mark.parametrize("problem", ["nse", "vke"])
@pytest.mark.parametrize("kind,R,SQ", [("morley", "id", "id"), ("dg1", "id", "companion"),
                                       ("dg2", "morley", "morley"), ("c0ip", "companion", "id"),
                                       ("wopsip", "id", "id")])
def test_jacobian_matches_finite_differences(problem, kind, R, SQ):
    bench = nse_grisvard_problem() if problem == "nse" else vke_pointload_problem()
    system = NonlinearSystem(lshape(1), SchemeConfig(kind, smoother_R=R, smoother_SQ=SQ),
                             bench.problem)
    assert verify.jacobian_fd_error(system, samples=2) < 1e-6


def test_residual_of_linear_problem_is_affine(rng):
    F = SourceTerm(f0=lambda X: np.ones(X.shape[:-1]), k=0, degree=2)
    s = NonlinearSystem(lshape(2), SchemeConfig("morley"), Problem("biharmonic", F))
    u, v = rng.standard_normal((2, s.size))
    assert np.allclose(s.residual(u + v) + s.residual(0 * u), s.residual(u) + s.residual(v))


def test_unknown_problem_kind():
    with pytest.raises(ValueError, match="problem"):
        Problem("stokes", SourceTerm())


def test_h_norm_of_quadratic():
    m = lshape(2)
    v = dg_function(m, interpolate_p2(m, lambda X: X[:, 0] ** 2))
    # jumps of a global quadratic only appear on the boundary
    assert h_norm(v) >= np.sqrt(4 * 3.0)
    pen = v.coeffs @ (jh_broken(m) @ v.coeffs)
    assert pen > 0
