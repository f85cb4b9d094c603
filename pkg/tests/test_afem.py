import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from plate_afem.afem import (AdaptConfig, adapt_loop, corner_touch, doerfler_mark, fit_slope,
                             min_area_near)
from plate_afem.bench import ZETA, nse_grisvard_problem, vke_pointload_problem
from plate_afem.mesh import check_conforming
from plate_afem.space import SchemeConfig

eta_lists = st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=12)


@given(eta_lists, st.floats(0.01, 1.0))
def test_doerfler_set_is_minimal(eta, theta):
    eta = np.array(eta)
    M = doerfler_mark(eta, theta)
    total = eta.sum()
    if total == 0:
        assert M.size == 0
        return
    assert eta[M].sum() >= theta * total * (1 - 1e-12)
    # no smaller set carries the bulk
    best = min(k for k in range(1, eta.size + 1)
               if np.sort(eta)[::-1][:k].sum() >= theta * total * (1 - 1e-12))
    assert M.size == best
    assert np.all(np.diff(M) > 0)


def test_doerfler_brute_force_small():
    eta = np.array([0.3, 0.1, 0.25, 0.05, 0.3])
    for theta in (0.2, 0.5, 0.8, 1.0):
        M = doerfler_mark(eta, theta)
        sizes = [len(c) for r in range(1, 6) for c in itertools.combinations(range(5), r)
                 if eta[list(c)].sum() >= theta * eta.sum() - 1e-15]
        assert M.size == min(sizes)


def test_doerfler_limits_and_ties():
    eta = np.array([1.0, 1.0, 1.0, 0.0])
    assert doerfler_mark(eta, 1.0).tolist() == [0, 1, 2]
    assert doerfler_mark(eta, 1e-9).tolist() == [0]
    assert doerfler_mark(np.zeros(3), 0.5).size == 0
    with pytest.raises(ValueError):
        doerfler_mark(np.array([1.0, -1.0]), 0.5)


def test_adapt_config_validation():
    for kw in ({"theta_D": 0.0}, {"theta_D": 1.5}, {"max_ndof": 0}, {"max_levels": 0}):
        with pytest.raises(ValueError):
            AdaptConfig(**kw)


def test_fit_slope():
    n = np.array([10, 100, 1000, 10000.0])
    assert fit_slope(n, 3 * n ** -0.5) == pytest.approx(-0.5)
    with pytest.raises(ValueError):
        fit_slope([1.0], [1.0])


@pytest.fixture(scope="module")
def grisvard_adaptive():
    bench = nse_grisvard_problem()
    return adapt_loop(bench.problem, bench.mesh0, SchemeConfig("morley"),
                      AdaptConfig(theta_D=0.5, max_ndof=5000), exact=bench.exact)


def test_adaptive_history(grisvard_adaptive):
    h = grisvard_adaptive
    assert np.all(np.diff(h.ndof) > 0)
    assert np.all(np.diff(h.column("ntriangles")) > 0)
    for m in h.meshes[::4]:
        check_conforming(m)
    assert h.ndof[-1] >= 5000 and h.ndof[-2] < 5000
    assert np.all(h.column("newton_iters") >= 1)


def test_adaptive_refines_towards_the_corner(grisvard_adaptive):
    # ties among minimal triangles make early levels irregular; from level 8 on it is stable
    assert all(corner_touch(m) for m in grisvard_adaptive.meshes[8:])
    last = grisvard_adaptive.meshes[-1]
    assert min_area_near(last, (0, 0), 1e-9) == pytest.approx(last.areas.min())


def test_reproducible(grisvard_adaptive, tmp_path):
    bench = nse_grisvard_problem()
    h2 = adapt_loop(bench.problem, bench.mesh0, SchemeConfig("morley"),
                    AdaptConfig(theta_D=0.5, max_ndof=5000), exact=bench.exact)
    grisvard_adaptive.to_csv(tmp_path / "a.csv")
    h2.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_vke_refines_at_point_load_and_corner():
    bench = vke_pointload_problem()
    h = adapt_loop(bench.problem, bench.mesh0, SchemeConfig("morley"),
                   AdaptConfig(theta_D=0.5, max_ndof=6000))
    m = h.meshes[-1]
    typical = np.median(m.areas)
    assert min_area_near(m, ZETA, 0.05) < typical / 20
    assert min_area_near(m, (0, 0), 1e-9) < typical / 20


def test_uniform_mode_bisects_everything():
    bench = nse_grisvard_problem()
    h = adapt_loop(bench.problem, bench.mesh0, SchemeConfig("morley"),
                   AdaptConfig(uniform=True, max_levels=4))
    assert len(h) == 4
    assert h.column("ntriangles").tolist() == [6, 12, 24, 48]
    assert np.all(np.isnan(h.error))


@pytest.mark.parametrize("kind", ["morley", "dg1", "dg2", "c0ip", "wopsip"])
@pytest.mark.parametrize("name", ["nse", "vke"])
def test_all_schemes_run_both_benchmarks(kind, name):
    bench = nse_grisvard_problem() if name == "nse" else vke_pointload_problem()
    SQ = "companion" if name == "nse" and kind in ("dg1", "dg2", "c0ip") else "id"
    h = adapt_loop(bench.problem, bench.mesh0, SchemeConfig(kind, smoother_SQ=SQ),
                   AdaptConfig(max_ndof=800), exact=bench.exact)
    assert np.all(np.isfinite(h.sigma)) and h.sigma[-1] < h.sigma[0]
    if name == "nse":
        assert 1.0 < h.ef[-1] < 6.0


def test_smoother_choice_does_not_matter_for_the_point_load():
    bench = vke_pointload_problem()
    sig = []
    for R, S in itertools.product(("id", "morley", "companion"), repeat=2):
        h = adapt_loop(bench.problem, bench.mesh0, SchemeConfig("morley", smoother_R=R, smoother_SQ=S),
                       AdaptConfig(uniform=True, max_ndof=1500))
        sig.append(h.sigma)
    sig = np.array(sig)
    assert np.all(sig.max(axis=0) <= 1.1 * sig.min(axis=0))
