"""Regenerate the bundled unstructured meshes in ``src/stokes_amg/data``.

Both meshes come from a Delaunay triangulation of a seeded point cloud, so the
output is reproducible bit for bit on a given numpy/scipy build.
"""
import argparse
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from stokes_amg.mesh import BoundaryTag, SimplicialMesh2D, signed_areas, write_mesh

DATA = Path(__file__).resolve().parents[1] / "src" / "stokes_amg" / "data"


def _tagged(verts, tris, tagger):
    tris = np.asarray(tris, dtype=np.int64)
    flip = signed_areas(verts, tris) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    m = SimplicialMesh2D(verts, tris, np.zeros((0, 2), dtype=np.int64), [])
    bnd = m.edges[m.edge_triangle_counts == 1]
    mid = 0.5 * (verts[bnd[:, 0]] + verts[bnd[:, 1]])
    m.boundary = bnd
    m.tags = [tagger(x, y) for x, y in mid]
    return m.validate()


def _channel_tag(x0, x1):
    def tag(x, y):
        if abs(x - x0) < 1e-9:
            return BoundaryTag.DIRICHLET_INFLOW
        if abs(x - x1) < 1e-9:
            return BoundaryTag.NEUMANN
        return BoundaryTag.DIRICHLET_ZERO
    return tag


def sample20(seed=7):
    """Unit square, 8 boundary points and 7 jittered interior points: 20 triangles."""
    rng = np.random.default_rng(seed)
    bnd = np.array([[0, 0], [0.5, 0], [1, 0], [1, 0.5], [1, 1], [0.5, 1], [0, 1], [0, 0.5]], float)
    inner = 0.2 + 0.6 * rng.random((7, 2))
    verts = np.vstack([bnd, inner])
    m = _tagged(verts, Delaunay(verts).simplices, _channel_tag(0.0, 1.0))
    assert m.n_triangles == 20, m.n_triangles
    return m


def cylinder_channel(h=0.041, seed=11, length=2.2, height=0.41, centre=(0.2, 0.2), radius=0.05):
    """Channel with a circular obstacle; jittered interior nodes of spacing ``h``."""
    rng = np.random.default_rng(seed)
    nx, ny = int(round(length / h)), int(round(height / h))
    xs, ys = np.linspace(0, length, nx + 1), np.linspace(0, height, ny + 1)
    rect = np.vstack([np.c_[xs, np.zeros_like(xs)], np.c_[xs, np.full_like(xs, height)],
                      np.c_[np.zeros(ny - 1), ys[1:-1]], np.c_[np.full(ny - 1, length), ys[1:-1]]])
    nc = int(np.ceil(2 * np.pi * radius / (0.4 * h)))
    ang = 2 * np.pi * np.arange(nc) / nc
    cx, cy = centre
    circ = np.c_[cx + radius * np.cos(ang), cy + radius * np.sin(ang)]
    gx, gy = np.meshgrid(xs[1:-1], ys[1:-1], indexing="xy")
    pts = np.c_[gx.ravel(), gy.ravel()] + 0.25 * h * (rng.random((gx.size, 2)) - 0.5)
    d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
    # grade towards the obstacle with a ring of intermediate nodes
    ring_r = radius + 0.5 * h
    nr = int(np.ceil(2 * np.pi * ring_r / (0.7 * h)))
    ra = 2 * np.pi * (np.arange(nr) + 0.5) / nr
    ring = np.c_[cx + ring_r * np.cos(ra), cy + ring_r * np.sin(ra)]
    pts = pts[d > radius + 0.9 * h]
    verts = np.vstack([rect, circ, ring, pts])
    tris = Delaunay(verts).simplices
    c = verts[tris].mean(axis=1)
    tris = tris[np.hypot(c[:, 0] - cx, c[:, 1] - cy) > radius]
    used = np.unique(tris)
    renum = np.full(len(verts), -1)
    renum[used] = np.arange(used.size)
    return _tagged(verts[used], renum[tris], _channel_tag(0.0, length))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=DATA)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    for name, m in (("sample20", sample20()), ("cylinder_channel", cylinder_channel())):
        write_mesh(args.out / f"{name}.json", m)
        print(f"{name}: {m.n_vertices} vertices, {m.n_triangles} triangles")


if __name__ == "__main__":
    main()
