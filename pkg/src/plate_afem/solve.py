"""Direct sparse solves, Newton iteration and nested iteration."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .forms import NonlinearSystem, Problem, h_norm_matrix
from .space import DiscreteFunction, SchemeConfig
from .transfer import prolong


class SingularMatrixError(RuntimeError):
    """Raised when a matrix is singular to working precision."""

    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


class NewtonError(RuntimeError):
    pass


class LUSolver:
    """Sparse LU factorisation (SuperLU, partial pivoting) of a square matrix."""

    def __init__(self, A):
        A = sp.csc_matrix(A, dtype=float)
        if A.shape[0] != A.shape[1]:
            raise ValueError("matrix must be square")
        n = A.shape[0]
        self.n = n
        if n == 0:
            self._lu = None
            return
        absA = abs(A)
        colmax = absA.max(axis=0).toarray().ravel()
        if np.any(colmax == 0):
            j = int(np.flatnonzero(colmax == 0)[0])
            raise SingularMatrixError(f"matrix is structurally singular (empty column {j})", j)
        rowmax = absA.max(axis=1).toarray().ravel()
        if np.any(rowmax == 0):
            i = int(np.flatnonzero(rowmax == 0)[0])
            raise SingularMatrixError(f"matrix is structurally singular (empty row {i})", i)
        try:
            self._lu = splu(A)
        except RuntimeError as exc:
            raise SingularMatrixError(f"LU factorisation failed: {exc}") from exc
        d = np.abs(self._lu.U.diagonal())
        scale = max(float(colmax.max()), 1e-300)
        k = int(np.argmin(d))
        if d[k] <= n * np.finfo(float).eps * scale:
            raise SingularMatrixError(
                f"matrix is singular to working precision (pivot {k}, |u_kk| = {d[k]:.3e})", k)

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self.n == 0:
            return np.zeros_like(b)
        return self._lu.solve(b)


def sparse_solve(A, b):
    """Solve ``A x = b`` by sparse LU with partial pivoting."""
    return LUSolver(A).solve(b)


# ----------------------------------------------------------------------
# Newton


@dataclass(frozen=True)
class NewtonConfig:
    """Two-stage Newton termination.

    ``use_a_norm=None`` picks the ``a_h`` norm when ``a_h`` is a scalar
    product and the ``||.||_h`` norm otherwise.
    """

    tol: float = 1e-4
    max_iter: int = 30
    use_a_norm: bool | None = None

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class NewtonReport:
    solution: np.ndarray
    history: list = field(default_factory=list)
    stage1_iters: int = 0
    stage2_iters: int = 0
    converged: bool = False

    @property
    def iterations(self):
        return self.stage1_iters + self.stage2_iters


class ResidualNorm:
    """``||A_h^{-1} r||`` in the ``a_h`` norm or the ``||.||_h`` norm."""

    def __init__(self, system: NonlinearSystem, use_a_norm=None):
        if use_a_norm is None:
            use_a_norm = system.scheme.symmetric
        A = system.matrix()
        self.lu = LUSolver(A)
        if use_a_norm:
            self.M = A
        else:
            H = h_norm_matrix(system.dofs)
            self.M = H if system.problem.ncomp == 1 else sp.block_diag([H, H], format="csr")

    def norm(self, x):
        return float(np.sqrt(max(x @ (self.M @ x), 0.0)))

    def residual(self, r):
        return self.norm(self.lu.solve(r))


def newton_solve(system: NonlinearSystem, u0, cfg: NewtonConfig = NewtonConfig()):
    """Newton iteration with the two-stage termination rule.

    Stage 1 runs until ``||A^{-1} N(u^{k+1})|| <= tol (||u^{k+1}|| + ||u^k||)``.
    Stage 2 continues while the residual decreases and returns the last
    iterate before the first non-decrease.  Linear problems stop after
    stage 1, since the Newton step is then exact.
    """
    rn = ResidualNorm(system, cfg.use_a_norm)
    u = np.array(u0, dtype=float)
    r = rn.residual(system.residual(u))
    rep = NewtonReport(u, [r])
    if r == 0.0:
        rep.converged = True
        return rep
    linear = system.problem.kind == "biharmonic"
    stage = 1
    while rep.iterations < cfg.max_iter:
        J = system.jacobian(u)
        u_new = u - LUSolver(J).solve(system.residual(u))
        r_new = rn.residual(system.residual(u_new))
        rep.history.append(r_new)
        if stage == 1:
            rep.stage1_iters += 1
            if r_new <= cfg.tol * (rn.norm(u_new) + rn.norm(u)):
                stage = 2
                if linear or r_new == 0.0:
                    rep.solution, rep.converged = u_new, True
                    return rep
            u, r = u_new, r_new
            continue
        rep.stage2_iters += 1
        if r <= r_new:
            rep.solution, rep.converged = u, True
            return rep
        u, r = u_new, r_new
        if r == 0.0:
            rep.solution, rep.converged = u, True
            return rep
    raise NewtonError(f"Newton did not terminate within {cfg.max_iter} iterations "
                      f"(last residual {rep.history[-1]:.3e})")


def algebraic_residual(system: NonlinearSystem, v, use_a_norm=None):
    """``||A_h^{-1} N_h(v)||``: computable proxy for the algebraic error."""
    return ResidualNorm(system, use_a_norm).residual(system.residual(np.asarray(v, dtype=float)))


# ----------------------------------------------------------------------
# nested iteration


def prolong_state(system_coarse, c, fine_mesh, scheme):
    parts = system_coarse.functions(c)
    return np.concatenate([prolong(p, fine_mesh, scheme).coeffs for p in parts])


def nested_solve(problem: Problem, scheme: SchemeConfig, meshes, cfg=NewtonConfig(), nested=True):
    """Solve on each mesh, starting from the prolonged previous solution.

    Returns lists of systems, solution vectors and Newton reports.
    """
    systems, sols, reports = [], [], []
    for lvl, mesh in enumerate(meshes):
        system = NonlinearSystem(mesh, scheme, problem)
        if lvl == 0 or not nested:
            u0 = np.zeros(system.size)
        else:
            u0 = prolong_state(systems[-1], sols[-1], mesh, scheme)
        rep = newton_solve(system, u0, cfg)
        systems.append(system)
        sols.append(rep.solution)
        reports.append(rep)
    return systems, sols, reports


def jacobian_beta(system: NonlinearSystem, c):
    """Smallest singular value of the Jacobian in the ``||.||_h`` geometry (desk scale)."""
    J = system.jacobian(c).toarray()
    H = h_norm_matrix(system.dofs).toarray()
    if system.problem.ncomp == 2:
        H = np.block([[H, np.zeros_like(H)], [np.zeros_like(H), H]])
    L = np.linalg.cholesky(H)
    Li = np.linalg.inv(L)
    return float(np.linalg.svd(Li @ J @ Li.T, compute_uv=False).min())


__all__ = [
    "SingularMatrixError", "NewtonError", "LUSolver", "sparse_solve", "NewtonConfig",
    "NewtonReport", "ResidualNorm", "newton_solve", "algebraic_residual", "nested_solve",
    "prolong_state", "DiscreteFunction", "jacobian_beta",
]
