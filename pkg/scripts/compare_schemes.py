"""Adaptive runs of all five schemes on one benchmark, with a joint convergence plot.

Usage: python3 scripts/compare_schemes.py [--problem nse-grisvard] [--max-ndof 10000] [--out out]
"""
import argparse
import os

from plate_afem.afem import AdaptConfig, adapt_loop, fit_slope
from plate_afem.bench import nse_grisvard_problem, vke_pointload_problem
from plate_afem.cli import default_smoother_SQ
from plate_afem.space import SCHEMES, SchemeConfig
from plate_afem.svg import write_loglog


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--problem", default="nse-grisvard", choices=("nse-grisvard", "vke-pointload"))
    ap.add_argument("--max-ndof", type=int, default=10000)
    ap.add_argument("--uniform", action="store_true")
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    bench = nse_grisvard_problem() if args.problem == "nse-grisvard" else vke_pointload_problem()
    series = []
    for kind in SCHEMES:
        scheme = SchemeConfig(kind, smoother_SQ=default_smoother_SQ(args.problem, kind))
        hist = adapt_loop(bench.problem, bench.mesh0, scheme,
                          AdaptConfig(max_ndof=args.max_ndof, uniform=args.uniform),
                          exact=bench.exact)
        hist.to_csv(os.path.join(args.out, f"{args.problem}_{kind}.csv"))
        y = hist.error if bench.exact is not None else hist.sigma
        print(f"{kind:7s} S=Q={scheme.smoother_SQ:9s} final ndof {int(hist.ndof[-1]):6d} "
              f"slope {fit_slope(hist.ndof, y):.3f} Newton {hist.column('newton_iters').mean():.1f}")
        series.append((kind, hist.ndof, y))
    write_loglog(os.path.join(args.out, f"{args.problem}_schemes.svg"), series,
                 slopes=(-0.5,), title=f"{args.problem}: all schemes")


if __name__ == "__main__":
    main()
