from math import factorial

import mpmath
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, strategies as st

from plate_afem.quadrature import (MAX_TRIANGLE_DEGREE, graded_split_rule, map_rule, quad_edge,
                                   quad_triangle, split_rule)


def monomial_exact(a, b):
    """int over the reference triangle of x^a y^b = a! b! / (a + b + 2)!."""
    return factorial(a) * factorial(b) / factorial(a + b + 2)


@given(st.integers(1, MAX_TRIANGLE_DEGREE), st.data())
def test_triangle_rule_exact_for_monomials(d, data):
    a = data.draw(st.integers(0, d))
    b = data.draw(st.integers(0, d - a))
    r = quad_triangle(d)
    x, y = r.points.T
    assert np.isclose(r.weights @ (x ** a * y ** b), monomial_exact(a, b), rtol=1e-12, atol=0)
    assert np.all(r.weights > 0)


def test_monomial_formula_against_sympy():
    x, y = sp.symbols("x y")
    for a, b in [(0, 0), (2, 1), (3, 4)]:
        exact = sp.integrate(sp.integrate(x ** a * y ** b, (y, 0, 1 - x)), (x, 0, 1))
        assert float(exact) == pytest.approx(monomial_exact(a, b), rel=1e-14)


@given(st.integers(1, 30), st.integers(0, 30))
def test_edge_rule_exact(d, k):
    if k > d:
        k = d
    r = quad_edge(d)
    assert np.isclose(r.weights @ r.points ** k, 1.0 / (k + 1), rtol=1e-13)


def test_split_rule_exact_for_hct_piecewise_polynomials():
    """Different cubic on each centroid subtriangle, exact integrals from sympy."""
    x, y = sp.symbols("x y")
    c = (sp.Rational(1, 3), sp.Rational(1, 3))
    V = [(0, 0), (1, 0), (0, 1)]
    polys = [x ** 3 + y, x * y ** 2 - 2, (x - y) ** 3 + x * y]
    exact = 0
    for s in range(3):
        P, Q = V[s], V[(s + 1) % 3]
        u, v = sp.symbols("u v")
        X = P[0] + u * (Q[0] - P[0]) + v * (c[0] - P[0])
        Y = P[1] + u * (Q[1] - P[1]) + v * (c[1] - P[1])
        jac = abs(sp.Matrix([[Q[0] - P[0], c[0] - P[0]], [Q[1] - P[1], c[1] - P[1]]]).det())
        g = polys[s].subs({x: X, y: Y}, simultaneous=True) * jac
        exact += sp.integrate(sp.integrate(g, (v, 0, 1 - u)), (u, 0, 1))
    r = split_rule(3)
    from plate_afem.transfer import hct_subtriangle
    sub = hct_subtriangle(r.points)
    fs = [sp.lambdify((x, y), p) for p in polys]
    val = sum(r.weights[sub == s] @ np.asarray(fs[s](*r.points[sub == s].T), dtype=float)
              * np.ones(np.sum(sub == s)) for s in range(3))
    assert val == pytest.approx(float(exact), rel=1e-13)


def test_graded_rule_resolves_vertex_singularity():
    """int_T r^(-1/2) over the reference triangle, polar-coordinate oracle."""
    exact = mpmath.quad(lambda t: mpmath.mpf(2) / 3 * (mpmath.cos(t) + mpmath.sin(t)) ** -1.5,
                        [0, mpmath.pi / 2])
    r = graded_split_rule(6, 0, 16)
    val = r.weights @ np.hypot(*r.points.T) ** -0.5
    assert val == pytest.approx(float(exact), rel=1e-5)
    plain = split_rule(6)
    assert abs(plain.weights @ np.hypot(*plain.points.T) ** -0.5 - float(exact)) > 1e-4


def test_map_rule_area():
    P = np.array([[0.0, 0.0], [2.0, 0.0], [0.5, 3.0]])
    _, w = map_rule(quad_triangle(2), P)
    assert w.sum() == pytest.approx(3.0)


@pytest.mark.parametrize("d", [0, -1, 31, 2.5])
def test_bad_degree(d):
    with pytest.raises(ValueError):
        quad_triangle(d)
