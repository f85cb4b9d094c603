"""Command line front end: ``plate-afem run|verify|mesh``.

A run is described by an INI file::

    [run]
    problem = nse-grisvard      ; nse-grisvard | vke-pointload | biharmonic-custom
    output = out/grisvard

    [scheme]
    kind = morley               ; morley | dg1 | dg2 | c0ip | wopsip
    theta = 1.0
    sigma1 = 20
    sigma2 = 20
    sigma_ip = 20
    smoother_R = id             ; id | morley | companion
    smoother_SQ = id            ; when omitted see default_smoother_SQ

    [adapt]
    uniform = false
    theta_D = 0.5
    max_ndof = 20000
    max_levels = 60

    [newton]
    tol = 1e-4
    max_iter = 30

Unknown sections or keys and invalid values exit with code 2 and a
message naming the offending field.
"""
import argparse
import configparser
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .afem import AdaptConfig, adapt_loop, fit_slope
from .bench import biharmonic_problem, nse_grisvard_problem, vke_pointload_problem
from .mesh import make_lshape, make_rectangle, uniform_refine
from .solve import NewtonConfig, NewtonError, SingularMatrixError
from .space import SCHEMES, SMOOTHERS, SchemeConfig
from .svg import write_loglog

log = logging.getLogger("plate_afem")

PROBLEMS = ("nse-grisvard", "vke-pointload", "biharmonic-custom")
DOMAINS = ("lshape", "rectangle")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending ``section.key``."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, parsed from an INI file."""

    problem: str = "nse-grisvard"
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    newton: NewtonConfig = field(default_factory=NewtonConfig)
    output: str = "out"
    f0: float = 1.0
    domain: str = "lshape"
    rectangle: tuple = (-1.0, 1.0, -1.0, 1.0)
    rectangle_cells: int = 1

    def benchmark(self):
        if self.problem == "nse-grisvard":
            return nse_grisvard_problem()
        if self.problem == "vke-pointload":
            return vke_pointload_problem()
        if self.domain == "lshape":
            mesh0 = make_lshape()
        else:
            x0, x1, y0, y1 = self.rectangle
            n = self.rectangle_cells
            mesh0 = make_rectangle(x0, x1, y0, y1, n, n)
        return biharmonic_problem(self.f0, mesh0)


_KEYS = {
    "run": {"problem", "output", "f0", "domain", "rectangle", "rectangle_cells"},
    "scheme": {"kind", "theta", "sigma1", "sigma2", "sigma_ip", "smoother_r", "smoother_sq"},
    "adapt": {"uniform", "theta_d", "max_ndof", "max_levels"},
    "newton": {"tol", "max_iter"},
}


def _get(cp, section, key, conv, default):
    name = f"{section}.{key}"
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if conv is bool:
            return cp.getboolean(section, key)
        return conv(raw)
    except ValueError:
        raise ConfigError(name, f"cannot parse {raw!r}") from None


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _choice(value, allowed, name):
    v = str(value).strip().lower()
    if v not in allowed:
        raise ConfigError(name, f"unknown value {value!r} (expected one of {', '.join(allowed)})")
    return v


def default_smoother_SQ(problem, kind):
    """Smoother ``S = Q`` used when the config leaves it open.

    The Grisvard load is given in divergence form, ``F(v) = int f1 . grad v
    + f2 : D^2 v``.  Tested with piecewise derivatives it misses the edge
    terms that the dG and C0IP forms carry, so these schemes test the load
    with the companion ``J I_M v``.  Morley and WOPSIP keep ``id``.
    """
    if problem == "nse-grisvard" and kind in ("dg1", "dg2", "c0ip"):
        return "companion"
    return "id"


def parse_config(text):
    """Parse the INI ``text`` into a :class:`RunConfig` (raises :class:`ConfigError`)."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("config", str(exc).splitlines()[0]) from None
    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(section, "unknown section")
        for key in cp.options(section):
            if key not in _KEYS[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")

    problem = _choice(_get(cp, "run", "problem", str, "nse-grisvard"), PROBLEMS, "run.problem")
    domain = _choice(_get(cp, "run", "domain", str, "lshape"), DOMAINS, "run.domain")
    rect = _get(cp, "run", "rectangle", _floats, (-1.0, 1.0, -1.0, 1.0))
    if len(rect) != 4 or rect[0] >= rect[1] or rect[2] >= rect[3]:
        raise ConfigError("run.rectangle", "expected x0 x1 y0 y1 with x0 < x1 and y0 < y1")
    cells = _get(cp, "run", "rectangle_cells", int, 1)
    if cells < 1:
        raise ConfigError("run.rectangle_cells", "must be positive")

    kind = _choice(_get(cp, "scheme", "kind", str, "morley"), SCHEMES, "scheme.kind")
    sR = _choice(_get(cp, "scheme", "smoother_r", str, "id"), SMOOTHERS, "scheme.smoother_R")
    sSQ = _get(cp, "scheme", "smoother_sq", str, None)
    sSQ = default_smoother_SQ(problem, kind) if sSQ is None else \
        _choice(sSQ, SMOOTHERS, "scheme.smoother_SQ")
    values = {}
    for key in ("theta", "sigma1", "sigma2", "sigma_ip"):
        values[key] = _get(cp, "scheme", key, float, getattr(SchemeConfig, key))
    if not -1.0 <= values["theta"] <= 1.0:
        raise ConfigError("scheme.theta", "must lie in [-1, 1]")
    for key in ("sigma1", "sigma2", "sigma_ip"):
        if values[key] <= 0:
            raise ConfigError(f"scheme.{key}", "must be positive")
    scheme = SchemeConfig(kind=kind, smoother_R=sR, smoother_SQ=sSQ, **values)

    theta_D = _get(cp, "adapt", "theta_d", float, AdaptConfig.theta_D)
    if not 0.0 < theta_D <= 1.0:
        raise ConfigError("adapt.theta_D", "must lie in (0, 1]")
    max_ndof = _get(cp, "adapt", "max_ndof", int, AdaptConfig.max_ndof)
    if max_ndof < 1:
        raise ConfigError("adapt.max_ndof", "must be positive")
    max_levels = _get(cp, "adapt", "max_levels", int, AdaptConfig.max_levels)
    if max_levels < 1:
        raise ConfigError("adapt.max_levels", "must be positive")
    adapt = AdaptConfig(theta_D=theta_D, max_ndof=max_ndof, max_levels=max_levels,
                        uniform=_get(cp, "adapt", "uniform", bool, False))

    tol = _get(cp, "newton", "tol", float, NewtonConfig.tol)
    if tol <= 0:
        raise ConfigError("newton.tol", "must be positive")
    max_iter = _get(cp, "newton", "max_iter", int, NewtonConfig.max_iter)
    if max_iter < 1:
        raise ConfigError("newton.max_iter", "must be positive")

    return RunConfig(problem=problem, scheme=scheme, adapt=adapt,
                     newton=NewtonConfig(tol=tol, max_iter=max_iter),
                     output=_get(cp, "run", "output", str, "out"),
                     f0=_get(cp, "run", "f0", float, 1.0), domain=domain, rectangle=rect,
                     rectangle_cells=cells)


def load_config(path):
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None


def execute(cfg: RunConfig, output=None):
    """Run the experiment of ``cfg`` and write all artifacts; returns the history."""
    out = output or cfg.output
    os.makedirs(out, exist_ok=True)
    bench = cfg.benchmark()

    def on_level(level, mesh, system, coeffs, report):
        log.info("level %d: ndof %d, sigma %.4e", level, system.size, report.sigma)
        report.to_csv(os.path.join(out, f"estimator_level{level:02d}.csv"))
        mesh.save_txt(os.path.join(out, f"mesh_level{level:02d}.txt"))

    hist = adapt_loop(bench.problem, bench.mesh0, cfg.scheme, cfg.adapt, exact=bench.exact,
                      newton=cfg.newton, callback=on_level)
    hist.to_csv(os.path.join(out, "history.csv"))
    series = [("estimator", hist.ndof, hist.sigma)]
    if bench.exact is not None:
        series.append(("error", hist.ndof, hist.error))
    mode = "uniform" if cfg.adapt.uniform else "adaptive"
    write_loglog(os.path.join(out, "convergence.svg"), series, slopes=(-0.5, -0.25),
                 title=f"{cfg.problem}, {cfg.scheme.kind}, {mode}")
    return hist


def emit_meshes(cfg: RunConfig, output=None):
    """Write the mesh sequence of a run (uniform: no solves; adaptive: solves but writes meshes only)."""
    out = output or cfg.output
    os.makedirs(out, exist_ok=True)
    bench = cfg.benchmark()
    if cfg.adapt.uniform:
        from .space import build_dofmap
        mesh = bench.mesh0
        meshes = [mesh]
        ncomp = bench.problem.ncomp
        while (len(meshes) < cfg.adapt.max_levels
               and ncomp * build_dofmap(mesh, cfg.scheme.kind).ndof < cfg.adapt.max_ndof):
            mesh = uniform_refine(mesh)
            meshes.append(mesh)
    else:
        meshes = adapt_loop(bench.problem, bench.mesh0, cfg.scheme, cfg.adapt,
                            newton=cfg.newton).meshes
    for level, mesh in enumerate(meshes):
        mesh.save_txt(os.path.join(out, f"mesh_level{level:02d}.txt"))
    return meshes


def _summary(hist):
    r = hist.records[-1]
    msg = f"{len(hist)} levels, final ndof {r.ndof}, sigma {r.sigma:.4e}"
    if np.isfinite(r.error_h):
        msg += f", error {r.error_h:.4e}, EF {r.ef:.3f}"
    if len(hist) >= 2:
        msg += f", estimator slope {fit_slope(hist.ndof, hist.sigma):.3f}"
        if np.all(np.isfinite(hist.error)):
            msg += f", error slope {fit_slope(hist.ndof, hist.error):.3f}"
    return msg


def main(argv=None):
    parser = argparse.ArgumentParser(prog="plate-afem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log every level")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run the configured experiment")
    p_run.add_argument("config")
    p_run.add_argument("-o", "--output", help="override run.output")
    sub.add_parser("verify", help="run the built-in property checks")
    p_mesh = sub.add_parser("mesh", help="write the mesh sequence only")
    p_mesh.add_argument("config")
    p_mesh.add_argument("-o", "--output", help="override run.output")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")

    if args.command == "verify":
        from .verify import run_all
        checks = run_all()
        for c in checks:
            print(c.line())
        return 0 if all(c.ok for c in checks) else 1

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"plate-afem: configuration error in {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "mesh":
            meshes = emit_meshes(cfg, args.output)
            print(f"wrote {len(meshes)} meshes to {args.output or cfg.output}")
            return 0
        hist = execute(cfg, args.output)
    except (NewtonError, SingularMatrixError) as exc:
        print(f"plate-afem: solver failure: {exc}", file=sys.stderr)
        return 1
    print(_summary(hist))
    return 0


if __name__ == "__main__":
    sys.exit(main())
