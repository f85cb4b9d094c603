"""Uniform and adaptive runs for the von Karman plate with a point load at the centroid.

Usage: python3 scripts/vke_pointload.py [--scheme morley] [--max-ndof 20000] [--out out]
"""
import argparse
import os

from plate_afem.afem import AdaptConfig, adapt_loop, fit_slope, min_area_near
from plate_afem.bench import ZETA, vke_pointload_problem
from plate_afem.space import SchemeConfig
from plate_afem.svg import write_loglog


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scheme", default="morley")
    ap.add_argument("--max-ndof", type=int, default=20000)
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    bench = vke_pointload_problem()
    scheme = SchemeConfig(args.scheme)
    series = []
    for uniform in (True, False):
        mode = "uniform" if uniform else "adaptive"
        hist = adapt_loop(bench.problem, bench.mesh0, scheme,
                          AdaptConfig(max_ndof=args.max_ndof, uniform=uniform))
        hist.to_csv(os.path.join(args.out, f"vke_{args.scheme}_{mode}.csv"))
        mesh = hist.meshes[-1]
        print(f"{mode:8s} estimator slope {fit_slope(hist.ndof, hist.sigma):.3f}; "
              f"smallest area at corner {min_area_near(mesh, (0, 0), 1e-12):.2e}, "
              f"near zeta {min_area_near(mesh, ZETA, 0.05):.2e}")
        series.append((f"sigma {mode}", hist.ndof, hist.sigma))
    write_loglog(os.path.join(args.out, f"vke_{args.scheme}.svg"), series,
                 slopes=(-0.5, -1.0 / 3.0), title=f"VKE point load, {args.scheme}")


if __name__ == "__main__":
    main()
