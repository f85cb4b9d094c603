"""Uniform and adaptive Morley runs on the Grisvard Navier-Stokes benchmark.

Usage: python3 scripts/grisvard_nse.py [--scheme morley] [--max-ndof 20000] [--out out]
"""
import argparse
import os

from plate_afem.afem import AdaptConfig, adapt_loop, corner_touch, fit_slope
from plate_afem.bench import nse_grisvard_problem
from plate_afem.cli import default_smoother_SQ
from plate_afem.space import SchemeConfig
from plate_afem.svg import write_loglog


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--scheme", default="morley")
    ap.add_argument("--max-ndof", type=int, default=20000)
    ap.add_argument("--out", default="out")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)
    bench = nse_grisvard_problem()
    scheme = SchemeConfig(args.scheme, smoother_SQ=default_smoother_SQ("nse-grisvard", args.scheme))
    series = []
    for uniform in (True, False):
        mode = "uniform" if uniform else "adaptive"
        hist = adapt_loop(bench.problem, bench.mesh0, scheme,
                          AdaptConfig(max_ndof=args.max_ndof, uniform=uniform), exact=bench.exact)
        hist.to_csv(os.path.join(args.out, f"grisvard_{args.scheme}_{mode}.csv"))
        print(f"{mode:8s} error slope {fit_slope(hist.ndof, hist.error):.3f} "
              f"estimator slope {fit_slope(hist.ndof, hist.sigma):.3f} "
              f"EF {hist.ef.min():.2f}..{hist.ef.max():.2f}")
        if not uniform:
            print(f"minimal-area triangle touches the corner: {corner_touch(hist.meshes[-1])}")
        series += [(f"error {mode}", hist.ndof, hist.error), (f"sigma {mode}", hist.ndof, hist.sigma)]
    write_loglog(os.path.join(args.out, f"grisvard_{args.scheme}.svg"), series,
                 slopes=(-0.5, -0.272), title=f"Grisvard NSE, {args.scheme}")


if __name__ == "__main__":
    main()
