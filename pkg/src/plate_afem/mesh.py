"""Conforming triangulations with newest-vertex bisection.

Triangles are stored counter-clockwise as ``(a, b, c)`` where ``(a, b)`` is
the refinement edge and ``c`` the newest vertex.  Local edge ``k`` of a
triangle joins local vertices ``k`` and ``k + 1 (mod 3)``, so local edge 0 is
always the refinement edge.

Interior edge normals follow a geometric rule (tangent pointing into the
half plane ``x > 0``, or straight up for vertical edges, normal = tangent
rotated clockwise).  Collinear halves of a bisected edge therefore inherit
the normal of their parent.  Boundary edges carry the outward normal.
"""
from dataclasses import dataclass, field, replace

import numpy as np

LOCAL_EDGES = np.array([[0, 1], [1, 2], [2, 0]])


@dataclass(frozen=True, eq=False)
class Triangulation:
    vertices: np.ndarray
    triangles: np.ndarray
    level: np.ndarray
    parent: np.ndarray | None = None
    edges: np.ndarray = field(init=False, repr=False)
    edge_tris: np.ndarray = field(init=False, repr=False)
    tri_edges: np.ndarray = field(init=False, repr=False)
    tri_edge_sign: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)
    tangents: np.ndarray = field(init=False, repr=False)
    edge_lengths: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)
    diameters: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        V = np.asarray(self.vertices, dtype=float)
        T = np.asarray(self.triangles, dtype=np.int64)
        object.__setattr__(self, "vertices", V)
        object.__setattr__(self, "triangles", T)
        object.__setattr__(self, "level", np.asarray(self.level, dtype=np.int64))
        self._build_geometry()
        self._build_edges()

    def _build_geometry(self):
        P = self.vertices[self.triangles]
        d1 = P[:, 1] - P[:, 0]
        d2 = P[:, 2] - P[:, 0]
        signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        if np.any(signed <= 0):
            raise ValueError("triangles must be positively oriented")
        lens = np.linalg.norm(P[:, [1, 2, 0]] - P, axis=2)
        object.__setattr__(self, "areas", signed)
        object.__setattr__(self, "diameters", lens.max(axis=1))

    def _build_edges(self):
        T = self.triangles
        nt = len(T)
        pairs = T[:, LOCAL_EDGES].reshape(-1, 2)
        key = np.sort(pairs, axis=1)
        edges, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        ne = len(edges)
        owner = np.repeat(np.arange(nt), 3)
        counts = np.bincount(inv, minlength=ne)
        if np.any(counts > 2):
            raise ValueError("edge shared by more than two triangles")

        X = self.vertices
        tang = X[edges[:, 1]] - X[edges[:, 0]]
        length = np.linalg.norm(tang, axis=1)
        tang = tang / length[:, None]
        flip = (tang[:, 0] < -1e-14) | ((np.abs(tang[:, 0]) <= 1e-14) & (tang[:, 1] < 0))
        tang[flip] *= -1.0
        nrm = np.column_stack([tang[:, 1], -tang[:, 0]])

        # outward normal of each (triangle, local edge)
        tpair = X[pairs[:, 1]] - X[pairs[:, 0]]
        out = np.column_stack([tpair[:, 1], -tpair[:, 0]])
        outward = np.einsum("ij,ij->i", out, nrm[inv]) > 0

        edge_tris = -np.ones((ne, 2), dtype=np.int64)
        plus = outward
        edge_tris[inv[plus], 0] = owner[plus]
        edge_tris[inv[~plus], 1] = owner[~plus]
        if np.any((counts == 2) & ((edge_tris[:, 0] < 0) | (edge_tris[:, 1] < 0))):
            raise ValueError("inconsistent orientation across an interior edge")

        boundary = counts == 1
        # boundary edges: outward normal, the single triangle is T+
        bnd_minus = boundary & (edge_tris[:, 0] < 0)
        edge_tris[bnd_minus, 0] = edge_tris[bnd_minus, 1]
        edge_tris[bnd_minus, 1] = -1
        nrm[bnd_minus] *= -1.0
        tang[bnd_minus] *= -1.0

        sign = np.where(edge_tris[inv, 0] == owner, 1, -1).reshape(nt, 3)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "edge_tris", edge_tris)
        object.__setattr__(self, "tri_edges", inv.reshape(nt, 3))
        object.__setattr__(self, "tri_edge_sign", sign)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "tangents", tang)
        object.__setattr__(self, "edge_lengths", length)

    # ------------------------------------------------------------------
    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def boundary_edges(self):
        return self.edge_tris[:, 1] < 0

    @property
    def interior_edges(self):
        return ~self.boundary_edges

    @property
    def boundary_vertices(self):
        flag = np.zeros(self.n_vertices, dtype=bool)
        flag[self.edges[self.boundary_edges].ravel()] = True
        return flag

    @property
    def h_max(self):
        return float(self.diameters.max())

    def vertex_triangle_counts(self):
        return np.bincount(self.triangles.ravel(), minlength=self.n_vertices)

    def affine_maps(self):
        """Return ``(origin, B, Binv)`` with ``x = origin + B @ xhat`` per triangle."""
        P = self.vertices[self.triangles]
        B = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
        return P[:, 0], B, np.linalg.inv(B)

    def to_reference(self, tri, x):
        """Reference coordinates of physical points ``x`` in triangles ``tri``."""
        origin, _, Binv = self._maps
        return np.einsum("nij,nj->ni", Binv[tri], x - origin[tri])

    @property
    def _maps(self):
        return self.cached("affine_maps", self.affine_maps)

    def cached(self, key, build):
        """Memoise a derived per-mesh object (the mesh itself is immutable)."""
        store = self.__dict__.setdefault("_cache", {})
        if key not in store:
            store[key] = build()
        return store[key]

    def edge_patch(self, e):
        """Triangles ``(T+, T-)`` adjacent to edge ``e``; ``T-`` is None on the boundary."""
        tp, tm = self.edge_tris[e]
        return int(tp), (None if tm < 0 else int(tm))

    def min_angle(self):
        """Smallest interior angle (radians) over all triangles."""
        P = self.vertices[self.triangles]
        ang = []
        for k in range(3):
            u = P[:, (k + 1) % 3] - P[:, k]
            v = P[:, (k + 2) % 3] - P[:, k]
            c = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1))
            ang.append(np.arccos(np.clip(c, -1.0, 1.0)))
        return float(np.min(ang))

    def with_flipped_edge(self, e):
        """Copy with the orientation of interior edge ``e`` reversed."""
        if self.edge_tris[e, 1] < 0:
            raise ValueError("only interior edges can be flipped")
        new = replace(self)
        new.edge_tris[e] = new.edge_tris[e, ::-1]
        new.normals[e] *= -1.0
        new.tangents[e] *= -1.0
        new.tri_edge_sign[new.tri_edges == e] *= -1
        return new

    def locate(self, x, tol=1e-12):
        """Indices of all triangles whose closure contains the point ``x``."""
        lam = self._barycentric_all(np.asarray(x, dtype=float))
        return np.flatnonzero(np.all(lam >= -tol, axis=1))

    def _barycentric_all(self, x):
        origin, _, Binv = self._maps
        xh = np.einsum("nij,nj->ni", Binv, x[None, :] - origin)
        return np.column_stack([1.0 - xh.sum(axis=1), xh])

    def contains(self, x, tol=1e-12):
        return self.locate(x, tol).size > 0

    def save_txt(self, path):
        """Write vertices (``x y``) then triangles (``v0 v1 v2``) as plain text."""
        with open(path, "w") as fh:
            fh.write(f"{self.n_vertices} {self.n_triangles}\n")
            for x, y in self.vertices:
                fh.write(f"{x:.17g} {y:.17g}\n")
            for a, b, c in self.triangles:
                fh.write(f"{a} {b} {c}\n")


def load_txt(path):
    with open(path) as fh:
        nv, nt = map(int, fh.readline().split())
        V = np.array([list(map(float, fh.readline().split())) for _ in range(nv)])
        T = np.array([list(map(int, fh.readline().split())) for _ in range(nt)])
    return Triangulation(V, T, np.zeros(len(T), dtype=np.int64))


def _square_pair(v00, v10, v11, v01):
    # hypotenuse v00-v11 first, right-angle vertex last
    return [(v11, v00, v10), (v00, v11, v01)]


def make_rectangle(x0=0.0, x1=1.0, y0=0.0, y1=1.0, nx=1, ny=1):
    """Structured mesh of a rectangle, cells cut along the main diagonal."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    V = np.column_stack([X.ravel(), Y.ravel()])
    idx = lambda i, j: i * (ny + 1) + j
    T = []
    for i in range(nx):
        for j in range(ny):
            T += _square_pair(idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1))
    return Triangulation(V, np.array(T), np.zeros(len(T), dtype=np.int64))


def make_lshape():
    """Six right-isosceles triangles on ``(-1,1)^2 minus [0,1)^2``."""
    V = np.array([
        [-1.0, -1.0], [0.0, -1.0], [1.0, -1.0],
        [-1.0, 0.0], [0.0, 0.0], [1.0, 0.0],
        [-1.0, 1.0], [0.0, 1.0],
    ])
    T = []
    T += _square_pair(0, 1, 4, 3)
    T += _square_pair(1, 2, 5, 4)
    T += _square_pair(3, 4, 7, 6)
    return Triangulation(V, np.array(T), np.zeros(len(T), dtype=np.int64))


def _close_marking(mesh, edge_marked):
    t2e = mesh.tri_edges
    while True:
        need = edge_marked[t2e].any(axis=1) & ~edge_marked[t2e[:, 0]]
        if not need.any():
            return edge_marked
        edge_marked[t2e[need, 0]] = True


def refine(mesh: Triangulation, marked) -> Triangulation:
    """Newest-vertex bisection of the marked triangles plus closure.

    The returned mesh carries ``parent``: for every new triangle the index
    of the triangle of ``mesh`` it was cut from.
    """
    marked = np.unique(np.asarray(marked, dtype=np.int64).ravel())
    if marked.size and (marked.min() < 0 or marked.max() >= mesh.n_triangles):
        raise IndexError("marked triangle index out of range")
    T = mesh.triangles
    nt = len(T)
    if marked.size == 0:
        return Triangulation(mesh.vertices.copy(), T.copy(), mesh.level.copy(),
                             np.arange(nt))

    emark = np.zeros(mesh.n_edges, dtype=bool)
    emark[mesh.tri_edges[marked, 0]] = True
    emark = _close_marking(mesh, emark)

    new_ids = np.flatnonzero(emark)
    mid = -np.ones(mesh.n_edges, dtype=np.int64)
    mid[new_ids] = mesh.n_vertices + np.arange(new_ids.size)
    E = mesh.edges[new_ids]
    V = np.vstack([mesh.vertices, 0.5 * (mesh.vertices[E[:, 0]] + mesh.vertices[E[:, 1]])])

    t2e = mesh.tri_edges
    a, b, c = T[:, 0], T[:, 1], T[:, 2]
    m_ab, m_bc, m_ca = mid[t2e[:, 0]], mid[t2e[:, 1]], mid[t2e[:, 2]]
    lev = mesh.level
    ids = np.arange(nt)

    out_T, out_P, out_L = [], [], []

    def emit(mask, tris, bump):
        out_T.append(np.column_stack(tris)[mask])
        out_P.append(ids[mask])
        out_L.append(lev[mask] + bump)

    cut = m_ab >= 0
    emit(~cut, (a, b, c), 0)
    # left child (c, a, m) and its possible bisection along (c, a)
    left2 = cut & (m_ca >= 0)
    emit(cut & ~left2, (c, a, m_ab), 1)
    emit(left2, (m_ab, c, m_ca), 2)
    emit(left2, (a, m_ab, m_ca), 2)
    # right child (b, c, m) and its possible bisection along (b, c)
    right2 = cut & (m_bc >= 0)
    emit(cut & ~right2, (b, c, m_ab), 1)
    emit(right2, (m_ab, b, m_bc), 2)
    emit(right2, (c, m_ab, m_bc), 2)

    newT = np.concatenate(out_T)
    parent = np.concatenate(out_P)
    level = np.concatenate(out_L)
    order = np.argsort(parent, kind="stable")
    return Triangulation(V, newT[order], level[order], parent[order])


def uniform_refine(mesh: Triangulation) -> Triangulation:
    return refine(mesh, np.arange(mesh.n_triangles))


def ancestor_map(meshes):
    """Compose parent maps: ancestor in ``meshes[0]`` of each triangle of ``meshes[-1]``."""
    anc = np.arange(meshes[-1].n_triangles)
    for m in reversed(meshes[1:]):
        anc = m.parent[anc]
    return anc


def check_conforming(mesh):
    """Raise ``AssertionError`` if the mesh has hanging nodes or bad edges."""
    counts = np.bincount(mesh.tri_edges.ravel(), minlength=mesh.n_edges)
    assert counts.max() <= 2
    used = np.zeros(mesh.n_vertices, dtype=bool)
    used[mesh.triangles.ravel()] = True
    assert used.all(), "unused vertex"
    # no vertex lies in the relative interior of an edge
    X = mesh.vertices
    A, B = X[mesh.edges[:, 0]], X[mesh.edges[:, 1]]
    mids = 0.5 * (A + B)
    lookup = {tuple(np.round(x, 14)) for x in X}
    for m in mids:
        assert tuple(np.round(m, 14)) not in lookup, "hanging vertex"
    assert np.all(mesh.areas > 0)
    return True
