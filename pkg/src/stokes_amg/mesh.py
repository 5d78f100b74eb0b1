"""2D simplicial meshes: structured generation, refinement and JSON ingestion."""
import itertools
import json
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from .errors import MeshFormatError, NonManifoldEdge, UntaggedBoundary

_ids = itertools.count()


class BoundaryTag(str, Enum):
    DIRICHLET_INFLOW = "DirichletInflow"
    DIRICHLET_ZERO = "DirichletZero"
    NEUMANN = "Neumann"

    @property
    def is_dirichlet(self):
        return self is not BoundaryTag.NEUMANN


def signed_areas(vertices, triangles):
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p2[:, 0] - p0[:, 0]) * (p1[:, 1] - p0[:, 1]))


@dataclass(eq=False)
class SimplicialMesh2D:
    """Triangle mesh with tagged boundary edges.

    ``boundary`` holds one row ``(i, j)`` per boundary edge with ``i < j`` and
    ``tags`` the matching :class:`BoundaryTag` values.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    tags: list
    barycentric: bool = False
    mesh_id: int = field(default_factory=lambda: next(_ids))

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 2)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.boundary = np.sort(np.asarray(self.boundary, dtype=np.int64).reshape(-1, 2), axis=1)
        self.tags = [BoundaryTag(t) for t in self.tags]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    @cached_property
    def _edge_table(self):
        local = self.triangles[:, [[0, 1], [1, 2], [2, 0]]].reshape(-1, 2)
        local = np.sort(local, axis=1)
        edges, inverse, counts = np.unique(local, axis=0, return_inverse=True, return_counts=True)
        return edges, inverse.reshape(-1, 3), counts

    @property
    def edges(self):
        """Unique undirected edges ``(i, j)``, ``i < j``, in lexicographic order."""
        return self._edge_table[0]

    @property
    def triangle_edges(self):
        """Edge index of local edges (0,1), (1,2), (2,0) of every triangle."""
        return self._edge_table[1]

    @property
    def edge_triangle_counts(self):
        return self._edge_table[2]

    def edge_index(self, pairs):
        """Look up edge indices of vertex pairs (any orientation)."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64).reshape(-1, 2), axis=1)
        n = self.n_vertices
        keys = self.edges[:, 0] * n + self.edges[:, 1]
        q = pairs[:, 0] * n + pairs[:, 1]
        pos = np.searchsorted(keys, q)
        if np.any(pos >= keys.size) or np.any(keys[np.minimum(pos, keys.size - 1)] != q):
            raise MeshFormatError("pair is not a mesh edge")
        return pos

    def areas(self):
        return signed_areas(self.vertices, self.triangles)

    def total_area(self):
        return float(self.areas().sum())

    def boundary_vertices(self, dirichlet_only=False):
        rows = self.boundary
        if dirichlet_only:
            mask = np.array([t.is_dirichlet for t in self.tags], dtype=bool)
            rows = rows[mask]
        return np.unique(rows)

    def edges_with_tag(self, tag):
        mask = np.array([t is BoundaryTag(tag) for t in self.tags], dtype=bool)
        return self.boundary[mask]

    def has_tag(self, tag):
        return any(t is BoundaryTag(tag) for t in self.tags)

    def validate(self):
        """Check orientation, manifoldness and boundary tagging; raise on failure."""
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices):
            raise MeshFormatError("triangle references a missing vertex")
        if np.any(self.areas() <= 0.0):
            raise MeshFormatError("triangle with non-positive signed area")
        counts = self.edge_triangle_counts
        if np.any(counts > 2):
            bad = self.edges[np.flatnonzero(counts > 2)[0]]
            raise NonManifoldEdge(f"edge {tuple(bad)} is shared by more than two triangles")
        bnd = self.edges[counts == 1]
        n = self.n_vertices
        have = set((self.boundary[:, 0] * n + self.boundary[:, 1]).tolist())
        need = set((bnd[:, 0] * n + bnd[:, 1]).tolist())
        if need - have:
            k = min(need - have)
            raise UntaggedBoundary(f"boundary edge {(k // n, k % n)} has no tag")
        if have - need:
            k = min(have - need)
            raise MeshFormatError(f"tagged edge {(k // n, k % n)} is not a boundary edge")
        if len(self.tags) != self.boundary.shape[0]:
            raise MeshFormatError("tag count does not match boundary edge count")
        return self


@dataclass
class Rectangle:
    x0: float = 0.0
    x1: float = 1.0
    y0: float = 0.0
    y1: float = 1.0
    left: BoundaryTag = BoundaryTag.DIRICHLET_ZERO
    right: BoundaryTag = BoundaryTag.DIRICHLET_ZERO
    bottom: BoundaryTag = BoundaryTag.DIRICHLET_ZERO
    top: BoundaryTag = BoundaryTag.DIRICHLET_ZERO

    @property
    def bbox(self):
        return self.x0, self.x1, self.y0, self.y1

    def contains(self, x, y):
        return np.ones_like(x, dtype=bool)

    def tag(self, x, y):
        tol = 1e-12 * max(self.x1 - self.x0, self.y1 - self.y0)
        if abs(x - self.x0) < tol:
            return BoundaryTag(self.left)
        if abs(x - self.x1) < tol:
            return BoundaryTag(self.right)
        if abs(y - self.y0) < tol:
            return BoundaryTag(self.bottom)
        return BoundaryTag(self.top)


def channel(length=4.0, height=1.0):
    """Straight channel with inflow on the left and natural outflow on the right."""
    return Rectangle(0.0, length, 0.0, height,
                     left=BoundaryTag.DIRICHLET_INFLOW, right=BoundaryTag.NEUMANN)


@dataclass
class BackwardFacingStep:
    """``[-1, 5] x [-1, 1]`` minus the step ``[-1, 0] x [-1, 0]``.

    Inflow on ``x = -1`` (``0 <= y <= 1``), natural outflow on ``x = 5``, no-slip
    elsewhere.
    """

    bbox = (-1.0, 5.0, -1.0, 1.0)

    def contains(self, x, y):
        return ~((x < 0.0) & (y < 0.0))

    def tag(self, x, y):
        if abs(x + 1.0) < 1e-12 and y > 0.0:
            return BoundaryTag.DIRICHLET_INFLOW
        if abs(x - 5.0) < 1e-12:
            return BoundaryTag.NEUMANN
        return BoundaryTag.DIRICHLET_ZERO


def structured_tri_mesh(nx, ny, domain=None):
    """Grid of ``nx x ny`` cells over the domain's bounding box, two triangles each.

    Cells are split along the lower-left to upper-right diagonal. Cells whose
    centre falls outside ``domain`` are masked out.
    """
    if int(nx) < 1 or int(ny) < 1:
        raise ValueError("nx and ny must be at least 1")
    nx, ny = int(nx), int(ny)
    domain = Rectangle() if domain is None else domain
    x0, x1, y0, y1 = domain.bbox
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    ci, cj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    ci, cj = ci.ravel(), cj.ravel()
    keep = domain.contains(0.5 * (xs[ci] + xs[ci + 1]), 0.5 * (ys[cj] + ys[cj + 1]))
    ci, cj = ci[keep], cj[keep]

    def gid(i, j):
        return j * (nx + 1) + i

    v00, v10, v11, v01 = gid(ci, cj), gid(ci + 1, cj), gid(ci + 1, cj + 1), gid(ci, cj + 1)
    tris = np.empty((2 * ci.size, 3), dtype=np.int64)
    tris[0::2] = np.stack([v00, v10, v11], axis=1)
    tris[1::2] = np.stack([v00, v11, v01], axis=1)
    used = np.unique(tris)
    renum = np.full((nx + 1) * (ny + 1), -1, dtype=np.int64)
    renum[used] = np.arange(used.size)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.stack([gx.ravel()[used], gy.ravel()[used]], axis=1)
    tris = renum[tris]
    return _with_boundary(verts, tris, domain.tag)


def _with_boundary(verts, tris, tagger, barycentric=False):
    m = SimplicialMesh2D(verts, tris, np.zeros((0, 2), dtype=np.int64), [], barycentric)
    bnd = m.edges[m.edge_triangle_counts == 1]
    mid = 0.5 * (verts[bnd[:, 0]] + verts[bnd[:, 1]])
    m.boundary = bnd
    m.tags = [BoundaryTag(tagger(x, y)) for x, y in mid]
    return m


class VertexOrigin(int, Enum):
    COARSE_VERTEX = 0
    EDGE_MIDPOINT = 1
    BARYCENTER = 2


@dataclass
class RefinementMap:
    """Origin of every child vertex.

    ``kind[i]`` is a :class:`VertexOrigin`; ``parents[i]`` holds the parent
    vertex indices (one, the two edge endpoints, or the three triangle corners,
    padded with -1).
    """

    parent_id: int
    child_id: int
    kind: np.ndarray
    parents: np.ndarray

    def origin(self, i):
        k = VertexOrigin(int(self.kind[i]))
        p = tuple(int(v) for v in self.parents[i] if v >= 0)
        return k, p


def quadrisect(m):
    """Split each triangle into four; child vertices are the coarse vertices
    followed by one midpoint per coarse edge, in edge order."""
    V, E = m.n_vertices, m.n_edges
    mids = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
    verts = np.vstack([m.vertices, mids])
    t = m.triangles
    e = m.triangle_edges + V
    m01, m12, m20 = e[:, 0], e[:, 1], e[:, 2]
    children = np.stack([
        np.stack([t[:, 0], m01, m20], axis=1),
        np.stack([m01, t[:, 1], m12], axis=1),
        np.stack([m20, m12, t[:, 2]], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ], axis=1).reshape(-1, 3)
    bmid = m.edge_index(m.boundary) + V
    boundary = np.vstack([np.stack([m.boundary[:, 0], bmid], axis=1),
                          np.stack([bmid, m.boundary[:, 1]], axis=1)])
    tags = list(m.tags) + list(m.tags)
    child = SimplicialMesh2D(verts, children, boundary, tags)
    kind = np.concatenate([np.full(V, VertexOrigin.COARSE_VERTEX), np.full(E, VertexOrigin.EDGE_MIDPOINT)])
    parents = np.full((V + E, 3), -1, dtype=np.int64)
    parents[:V, 0] = np.arange(V)
    parents[V:, :2] = m.edges
    return child, RefinementMap(m.mesh_id, child.mesh_id, kind, parents)


def barycentric_refine(m):
    """Alfeld split: connect every triangle's barycenter to its corners."""
    V, T = m.n_vertices, m.n_triangles
    t = m.triangles
    bary = m.vertices[t].mean(axis=1)
    verts = np.vstack([m.vertices, bary])
    c = np.arange(V, V + T)
    children = np.stack([
        np.stack([t[:, 0], t[:, 1], c], axis=1),
        np.stack([t[:, 1], t[:, 2], c], axis=1),
        np.stack([t[:, 2], t[:, 0], c], axis=1),
    ], axis=1).reshape(-1, 3)
    child = SimplicialMesh2D(verts, children, m.boundary.copy(), list(m.tags), barycentric=True)
    kind = np.concatenate([np.full(V, VertexOrigin.COARSE_VERTEX), np.full(T, VertexOrigin.BARYCENTER)])
    parents = np.full((V + T, 3), -1, dtype=np.int64)
    parents[:V, 0] = np.arange(V)
    parents[V:] = t
    return child, RefinementMap(m.mesh_id, child.mesh_id, kind, parents)


def read_mesh(path):
    """Load a mesh from the JSON format
    ``{"vertices": [[x, y], ...], "triangles": [[i, j, k], ...],
    "boundary": [[i, j, "tag"], ...]}``.

    Negatively oriented triangles are repaired by swapping two corners.
    """
    try:
        with open(path) as fh:
            data = json.load(fh)
        verts = np.asarray(data["vertices"], dtype=np.float64)
        tris = np.asarray(data["triangles"], dtype=np.int64)
        bnd = data["boundary"]
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise MeshFormatError(f"cannot read mesh {path}: {exc}") from exc
    if verts.ndim != 2 or verts.shape[1] != 2 or tris.ndim != 2 or tris.shape[1] != 3:
        raise MeshFormatError("vertices must be pairs and triangles triples")
    try:
        pairs = np.array([[int(b[0]), int(b[1])] for b in bnd], dtype=np.int64).reshape(-1, 2)
        tags = [BoundaryTag(b[2]) for b in bnd]
    except (IndexError, ValueError, TypeError) as exc:
        raise MeshFormatError(f"bad boundary entry: {exc}") from exc
    if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
        raise MeshFormatError("triangle references a missing vertex")
    flip = signed_areas(verts, tris) < 0.0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    m = SimplicialMesh2D(verts, tris, pairs, tags)
    return m.validate()


def write_mesh(path, m):
    data = {
        "vertices": m.vertices.tolist(),
        "triangles": m.triangles.tolist(),
        "boundary": [[int(i), int(j), t.value] for (i, j), t in zip(m.boundary, m.tags)],
    }
    with open(path, "w") as fh:
        json.dump(data, fh)
