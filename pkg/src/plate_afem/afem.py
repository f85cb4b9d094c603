"""Dörfler marking and the adaptive solve, estimate, mark and refine loop."""
import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .estimate import estimate
from .forms import NonlinearSystem, Problem
from .mesh import Triangulation, refine
from .solve import NewtonConfig, newton_solve, prolong_state
from .space import SchemeConfig

HISTORY_COLUMNS = ("level", "ndof", "ntriangles", "sigma", "osc", "error_h", "ef", "newton_iters")


@dataclass(frozen=True)
class AdaptConfig:
    """Adaptive loop settings.

    ``theta_D`` is the Dörfler bulk parameter, ``max_ndof`` stops the loop
    once a level reaches that many unknowns and ``uniform`` bypasses the
    marking so that every triangle is bisected.
    """

    theta_D: float = 0.5
    max_ndof: int = 20000
    uniform: bool = False
    max_levels: int = 60

    def __post_init__(self):
        if not 0.0 < self.theta_D <= 1.0:
            raise ValueError("theta_D must lie in (0, 1]")
        if self.max_ndof < 1:
            raise ValueError("max_ndof must be positive")
        if self.max_levels < 1:
            raise ValueError("max_levels must be positive")


def doerfler_mark(indicators, theta_D=0.5):
    """Minimal set carrying at least ``theta_D`` of the total indicator sum.

    The indicators (squared, per triangle) are sorted in decreasing order
    with ties broken by triangle index and the shortest prefix with enough
    bulk is returned as a sorted index array.
    """
    eta = np.asarray(indicators, dtype=float).ravel()
    if np.any(eta < 0):
        raise ValueError("indicators must be nonnegative")
    total = eta.sum()
    if eta.size == 0 or total <= 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(eta.size), -eta))
    csum = np.cumsum(eta[order])
    # guard the comparison against round-off in the cumulative sum
    n = int(np.searchsorted(csum, theta_D * total * (1 - 1e-14), side="left")) + 1
    n = min(n, int(np.count_nonzero(eta)))
    return np.sort(order[:n])


@dataclass
class LevelRecord:
    level: int
    ndof: int
    ntriangles: int
    sigma: float
    osc: float
    error_h: float
    ef: float
    newton_iters: int
    wall_time: float

    def row(self):
        return [str(self.level), str(self.ndof), str(self.ntriangles), f"{self.sigma:.10e}",
                f"{self.osc:.10e}", f"{self.error_h:.10e}", f"{self.ef:.10e}",
                str(self.newton_iters)]


@dataclass
class AdaptHistory:
    """Convergence history of an adaptive or uniform run.

    Besides the per-level records the history keeps the meshes, the
    estimator reports and the final system and coefficient vector, so that
    callers can export or post-process them.
    """

    records: list = field(default_factory=list)
    meshes: list = field(default_factory=list)
    reports: list = field(default_factory=list)
    system: NonlinearSystem | None = None
    solution: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    @property
    def ndof(self):
        return self.column("ndof")

    @property
    def sigma(self):
        return self.column("sigma")

    @property
    def error(self):
        return self.column("error_h")

    @property
    def ef(self):
        return self.column("ef")

    def to_csv(self, path):
        """Write the history columns, one row per level (no timings)."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow(r.row())


def fit_slope(ndof, values, last=5):
    """Least-squares slope of ``log(values)`` against ``log(ndof)`` over the last points."""
    x = np.log(np.asarray(ndof, dtype=float)[-last:])
    y = np.log(np.asarray(values, dtype=float)[-last:])
    if x.size < 2:
        raise ValueError("need at least two points to fit a slope")
    return float(np.polyfit(x, y, 1)[0])


def adapt_loop(problem: Problem, mesh0: Triangulation, scheme: SchemeConfig,
               cfg: AdaptConfig = AdaptConfig(), exact=None,
               newton: NewtonConfig = NewtonConfig(), error_fn=None, callback=None):
    """Run SOLVE, ESTIMATE, MARK and REFINE until ``cfg.max_ndof`` is reached.

    Each level starts Newton from the prolonged solution of the previous
    level.  When ``exact`` is given the error ``||u - u_h||_h`` is computed
    through ``error_fn(exact, parts)`` (defaults to :func:`bench.error_h`).
    ``callback(level, mesh, system, coeffs, report)`` is invoked per level.
    """
    if exact is not None and error_fn is None:
        from .bench import error_h as error_fn
    hist = AdaptHistory()
    mesh, prev = mesh0, None
    for level in range(cfg.max_levels):
        t0 = time.perf_counter()
        system = NonlinearSystem(mesh, scheme, problem)
        if prev is None:
            u0 = np.zeros(system.size)
        else:
            u0 = prolong_state(prev[0], prev[1], mesh, scheme)
        rep = newton_solve(system, u0, newton)
        parts = system.functions(rep.solution)
        est = estimate(parts, problem.source, scheme, problem.kind)
        err = float("nan")
        if exact is not None:
            err = error_fn(exact, parts if len(parts) > 1 else parts[0])
            est.error = err
        hist.records.append(LevelRecord(level, int(system.size), int(mesh.n_triangles),
                                        est.sigma, est.osc, err, est.ef if exact is not None
                                        else float("nan"), rep.iterations,
                                        time.perf_counter() - t0))
        hist.meshes.append(mesh)
        hist.reports.append(est)
        hist.system, hist.solution = system, rep.solution
        if callback is not None:
            callback(level, mesh, system, rep.solution, est)
        if system.size >= cfg.max_ndof or level == cfg.max_levels - 1:
            break
        if cfg.uniform:
            marked = np.arange(mesh.n_triangles)
        else:
            marked = doerfler_mark(est.sigma2, cfg.theta_D)
        prev = (system, rep.solution)
        mesh = refine(mesh, marked)
    return hist


def corner_touch(mesh: Triangulation, corner=(0.0, 0.0), tol=1e-12):
    """Whether a triangle of minimal area has ``corner`` as a vertex.

    Under bisection many triangles share the minimal area; any of them
    touching the corner counts.
    """
    a = mesh.areas
    tris = np.flatnonzero(a <= a.min() * (1 + 1e-9))
    P = mesh.vertices[mesh.triangles[tris]]
    return bool(np.any(np.hypot(P[..., 0] - corner[0], P[..., 1] - corner[1]) <= tol))


def min_area_near(mesh: Triangulation, point, radius):
    """Smallest triangle area among triangles with a vertex within ``radius`` of ``point``."""
    d = np.hypot(*(mesh.vertices - np.asarray(point, dtype=float)).T)
    near = np.any(d[mesh.triangles] <= radius, axis=1)
    return float(mesh.areas[near].min()) if near.any() else math.inf


__all__ = [
    "HISTORY_COLUMNS", "AdaptConfig", "doerfler_mark", "LevelRecord", "AdaptHistory",
    "fit_slope", "adapt_loop", "corner_touch", "min_area_near",
]
