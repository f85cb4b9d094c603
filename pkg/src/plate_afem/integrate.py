"""Mesh-wide volume quadrature, optionally graded towards a singular point."""
from dataclasses import dataclass

import numpy as np

from .quadrature import graded_split_rule, split_rule


@dataclass(frozen=True, eq=False)
class CellRule:
    """Groups of triangles sharing one reference rule.

    ``groups`` is a list of ``(tris, rule)`` pairs; together the groups
    cover every triangle exactly once.
    """

    groups: list
    n_triangles: int

    def physical(self, mesh, g):
        """Physical points (n, nq, 2) and weights (n, nq) of group ``g``."""
        tris, rule = self.groups[g]
        origin, B, _ = mesh._maps
        X = origin[tris, None, :] + np.einsum("tij,qj->tqi", B[tris], rule.points)
        W = 2.0 * mesh.areas[tris, None] * rule.weights[None, :]
        return X, W

    def integrate(self, mesh, f):
        """Per-triangle integrals of ``f(X) -> (n, nq, ...)``."""
        out = None
        for g, (tris, _) in enumerate(self.groups):
            X, W = self.physical(mesh, g)
            val = np.asarray(f(X))
            part = np.einsum("tq,tq...->t...", W, val)
            if out is None:
                out = np.zeros((self.n_triangles,) + part.shape[1:])
            out[tris] = part
        return out


def cell_rule(mesh, degree, singular=None, levels=12):
    """Split rule of the given degree on every triangle.

    Triangles with a vertex at the point ``singular`` get a rule graded
    geometrically towards that vertex.
    """
    nt = mesh.n_triangles
    if singular is None:
        return CellRule([(np.arange(nt), split_rule(degree))], nt)
    dist = np.linalg.norm(mesh.vertices[mesh.triangles] - np.asarray(singular), axis=2)
    hit = dist < 1e-12
    plain = np.flatnonzero(~hit.any(axis=1))
    groups = [(plain, split_rule(degree))] if plain.size else []
    for k in range(3):
        tris = np.flatnonzero(hit[:, k])
        if tris.size:
            groups.append((tris, graded_split_rule(degree, k, levels)))
    return CellRule(groups, nt)
