"""Finite-element assembly of the 2D Stokes blocks.

Three discretizations share one system type:

* ``TH``  -- continuous P2 velocity, continuous P1 pressure (Taylor-Hood);
* ``SV``  -- continuous P2 velocity, discontinuous P1 pressure on a
  barycentric mesh (Scott-Vogelius);
* ``ISO`` -- P1 velocity on the quadrisected mesh, P1 pressure on the parent
  mesh (P1isoP2/P1).

DoF layout: P2 DoFs are the mesh vertices followed by the edge midpoints in
edge order; discontinuous pressure DoF ``3 * t + c`` sits at corner ``c`` of
triangle ``t``. Dirichlet velocity DoFs are eliminated; the reduced system
keeps the x-component free DoFs first, then the y-component ones.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import CompatibilityError, LineageError, StabilityError
from .mesh import BoundaryTag, VertexOrigin
from .sparse import block_diag, canonicalize, saddle_matrix

DROP_TOL = 1e-12


def triangle_quadrature(degree):
    """Collapsed Gauss-Legendre rule on the reference triangle, exact to ``degree``.

    Returns barycentric coordinates ``(Q, 3)`` and weights summing to 1/2.
    """
    n = max(1, int(np.ceil((degree + 2) / 2)))
    g, w = np.polynomial.legendre.leggauss(n)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    u, v = np.meshgrid(g, g, indexing="ij")
    wu, wv = np.meshgrid(w, w, indexing="ij")
    xi = u.ravel()
    eta = (v * (1.0 - u)).ravel()
    weights = (wu * wv * (1.0 - u)).ravel()
    lam = np.stack([1.0 - xi - eta, xi, eta], axis=1)
    return lam, weights


class _Element:
    """Reference basis given in barycentric coordinates."""

    n_basis = 0

    @staticmethod
    def values(lam):
        raise NotImplementedError

    @staticmethod
    def dlam(lam):
        """Derivatives with respect to the three barycentric coordinates, ``(Q, nb, 3)``."""
        raise NotImplementedError


class _P1(_Element):
    n_basis = 3

    @staticmethod
    def values(lam):
        return lam.copy()

    @staticmethod
    def dlam(lam):
        return np.broadcast_to(np.eye(3), (lam.shape[0], 3, 3)).copy()


_EDGE_PAIRS = ((0, 1), (1, 2), (2, 0))


class _P2(_Element):
    n_basis = 6

    @staticmethod
    def values(lam):
        out = np.empty((lam.shape[0], 6))
        out[:, :3] = lam * (2.0 * lam - 1.0)
        for k, (a, b) in enumerate(_EDGE_PAIRS):
            out[:, 3 + k] = 4.0 * lam[:, a] * lam[:, b]
        return out

    @staticmethod
    def dlam(lam):
        Q = lam.shape[0]
        out = np.zeros((Q, 6, 3))
        for i in range(3):
            out[:, i, i] = 4.0 * lam[:, i] - 1.0
        for k, (a, b) in enumerate(_EDGE_PAIRS):
            out[:, 3 + k, a] = 4.0 * lam[:, b]
            out[:, 3 + k, b] = 4.0 * lam[:, a]
        return out


def barycentric_gradients(mesh):
    """Constant gradients of the barycentric coordinates, ``(T, 3, 2)``, and areas."""
    p = mesh.vertices[mesh.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    g = np.empty((mesh.n_triangles, 3, 2))
    g[:, 1, 0] = d2[:, 1] / det
    g[:, 1, 1] = -d2[:, 0] / det
    g[:, 2, 0] = -d1[:, 1] / det
    g[:, 2, 1] = d1[:, 0] / det
    g[:, 0] = -g[:, 1] - g[:, 2]
    return g, 0.5 * det


class FunctionSpace:
    element = _Element

    def __init__(self, mesh):
        self.mesh = mesh

    @property
    def n_dofs(self):
        raise NotImplementedError

    @cached_property
    def cell_dofs(self):
        raise NotImplementedError

    @cached_property
    def coords(self):
        raise NotImplementedError

    def boundary_dofs(self, tag_filter):
        """DoFs lying on boundary edges whose tag satisfies ``tag_filter``."""
        raise NotImplementedError

    def evaluate(self, coeffs, lam):
        """Values at the reference points ``lam`` in every cell, ``(T, Q, ...)``."""
        phi = self.element.values(lam)
        c = np.asarray(coeffs)[self.cell_dofs]
        return np.einsum("qb,tb...->tq...", phi, c)

    def physical_points(self, lam):
        return np.einsum("qk,tkd->tqd", lam, self.mesh.vertices[self.mesh.triangles])

    def gradients(self, lam):
        G, area = barycentric_gradients(self.mesh)
        dphi = self.element.dlam(lam)
        return np.einsum("qbk,tkd->tqbd", dphi, G), area


class P1Space(FunctionSpace):
    element = _P1

    @property
    def n_dofs(self):
        return self.mesh.n_vertices

    @cached_property
    def cell_dofs(self):
        return self.mesh.triangles

    @cached_property
    def coords(self):
        return self.mesh.vertices

    def boundary_dofs(self, tag_filter):
        rows = [e for e, t in zip(self.mesh.boundary, self.mesh.tags) if tag_filter(t)]
        return np.unique(np.asarray(rows, dtype=np.int64).reshape(-1, 2))


class P2Space(FunctionSpace):
    element = _P2

    @property
    def n_dofs(self):
        return self.mesh.n_vertices + self.mesh.n_edges

    @cached_property
    def cell_dofs(self):
        return np.hstack([self.mesh.triangles, self.mesh.n_vertices + self.mesh.triangle_edges])

    @cached_property
    def coords(self):
        m = self.mesh
        mids = 0.5 * (m.vertices[m.edges[:, 0]] + m.vertices[m.edges[:, 1]])
        return np.vstack([m.vertices, mids])

    def boundary_dofs(self, tag_filter):
        rows = np.asarray([e for e, t in zip(self.mesh.boundary, self.mesh.tags) if tag_filter(t)],
                          dtype=np.int64).reshape(-1, 2)
        if rows.size == 0:
            return np.zeros(0, dtype=np.int64)
        mids = self.mesh.n_vertices + self.mesh.edge_index(rows)
        return np.unique(np.concatenate([rows.ravel(), mids]))


class P1DiscSpace(FunctionSpace):
    element = _P1

    @property
    def n_dofs(self):
        return 3 * self.mesh.n_triangles

    @cached_property
    def cell_dofs(self):
        return np.arange(self.n_dofs, dtype=np.int64).reshape(-1, 3)

    @cached_property
    def coords(self):
        return self.mesh.vertices[self.mesh.triangles].reshape(-1, 2)

    def boundary_dofs(self, tag_filter):
        return np.zeros(0, dtype=np.int64)


def _scatter(local, rows, cols, shape):
    T, nr, nc = local.shape
    r = np.broadcast_to(rows[:, :, None], (T, nr, nc)).ravel()
    c = np.broadcast_to(cols[:, None, :], (T, nr, nc)).ravel()
    return canonicalize(sp.coo_matrix((local.ravel(), (r, c)), shape=shape), drop_tol=DROP_TOL)


def stiffness_matrix(space, broken=False):
    """Scalar Laplacian ``int grad u . grad v``.

    ``broken=True`` assembles element by element on a discontinuous layout
    (``3 * t + c`` numbering) without inter-element coupling.
    """
    lam, w = triangle_quadrature(4)
    grads, area = space.gradients(lam)
    local = np.einsum("q,t,tqid,tqjd->tij", w, 2.0 * area, grads, grads)
    if broken:
        dofs = np.arange(3 * space.mesh.n_triangles).reshape(-1, 3)
        return _scatter(local, dofs, dofs, (dofs.size, dofs.size))
    n = space.n_dofs
    return _scatter(local, space.cell_dofs, space.cell_dofs, (n, n))


def penalized_broken_laplacian(space, penalty=1.0):
    """Broken P1 Laplacian plus a penalty tying DoFs that share a vertex.

    The broken stiffness alone annihilates every piecewise constant, so an
    aggregate inside one element would get a zero Galerkin diagonal. Per
    vertex, the clique Laplacian of its ``m`` discontinuous DoFs is added with
    weight ``penalty * mean(diag) / m``; the sum annihilates only constants.
    Numbering is ``3 * t + c`` as in ``stiffness_matrix(space, broken=True)``.
    """
    A = stiffness_matrix(space, broken=True)
    vert = space.mesh.triangles.ravel()
    n = vert.size
    order = np.argsort(vert, kind="stable")
    vs = vert[order]
    start = np.flatnonzero(np.r_[True, vs[1:] != vs[:-1]])
    size = np.diff(np.r_[start, n])
    rows, cols = [], []
    for m in np.unique(size):
        members = order[start[size == m][:, None] + np.arange(m)[None, :]]
        rows.append(np.repeat(members, m, axis=1).ravel())
        cols.append(np.tile(members, (1, m)).ravel())
    rows, cols = np.concatenate(rows), np.concatenate(cols)
    m_of = np.bincount(vert)[vert].astype(np.float64)
    scale = penalty * float(A.diagonal().mean()) / m_of[rows]
    vals = np.where(rows == cols, m_of[rows] - 1.0, -1.0) * scale
    return canonicalize(A + sp.csr_matrix((vals, (rows, cols)), shape=(n, n)))


def mass_matrix(test, trial=None):
    """``int phi_trial * phi_test``; rows follow ``test``, columns ``trial``."""
    trial = test if trial is None else trial
    if test.mesh is not trial.mesh:
        raise ValueError("mixed mass matrices need a common mesh")
    lam, w = triangle_quadrature(4)
    _, area = barycentric_gradients(test.mesh)
    a = test.element.values(lam)
    b = trial.element.values(lam)
    ref = np.einsum("q,qi,qj->ij", w, a, b)
    local = 2.0 * area[:, None, None] * ref[None]
    return _scatter(local, test.cell_dofs, trial.cell_dofs, (test.n_dofs, trial.n_dofs))


def divergence_matrix(vspace, pspace):
    """``B[p, c*N + v] = -int q_p d_c phi_v`` over both velocity components."""
    if vspace.mesh is not pspace.mesh:
        raise ValueError("velocity and pressure spaces need a common mesh here")
    lam, w = triangle_quadrature(3)
    grads, area = vspace.gradients(lam)
    q = pspace.element.values(lam)
    N = vspace.n_dofs
    blocks = []
    for comp in range(2):
        local = -np.einsum("q,t,qi,tqj->tij", w, 2.0 * area, q, grads[..., comp])
        blocks.append(_scatter(local, pspace.cell_dofs, vspace.cell_dofs, (pspace.n_dofs, N)))
    return canonicalize(sp.hstack(blocks))


def coupling_pattern(vspace, pspace):
    """Structural velocity-pressure connectivity, shaped like ``divergence_matrix``.

    Entries that cancel exactly in the assembled divergence block (e.g. P2
    vertex functions against P1 pressure) are still present here.
    """
    T = pspace.cell_dofs.shape[0]
    nr, nc = pspace.cell_dofs.shape[1], vspace.cell_dofs.shape[1]
    r = np.broadcast_to(pspace.cell_dofs[:, :, None], (T, nr, nc)).ravel()
    c = np.broadcast_to(vspace.cell_dofs[:, None, :], (T, nr, nc)).ravel()
    G = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(pspace.n_dofs, vspace.n_dofs))
    G.data[:] = 1.0
    return canonicalize(sp.hstack([G, G]))


def load_vector(space, f, degree=6):
    """``int f . phi`` for both components, stacked ``[x-part, y-part]``."""
    lam, w = triangle_quadrature(degree)
    _, area = barycentric_gradients(space.mesh)
    pts = space.physical_points(lam)
    fv = np.asarray(f(pts.reshape(-1, 2))).reshape(pts.shape[0], pts.shape[1], 2)
    phi = space.element.values(lam)
    out = np.zeros(2 * space.n_dofs)
    for comp in range(2):
        local = np.einsum("q,t,tq,qb->tb", w, 2.0 * area, fv[..., comp], phi)
        out[comp * space.n_dofs:(comp + 1) * space.n_dofs] = np.bincount(
            space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.n_dofs)
    return out


def parabolic_inflow(mesh):
    """Unit-peak parabola in ``u_x`` across the extent of the inflow boundary."""
    edges = mesh.edges_with_tag(BoundaryTag.DIRICHLET_INFLOW)
    if edges.size == 0:
        return lambda xy: np.zeros((len(xy), 2))
    ys = mesh.vertices[edges.ravel(), 1]
    lo, hi = ys.min(), ys.max()

    def g(xy):
        xy = np.asarray(xy).reshape(-1, 2)
        s = (xy[:, 1] - lo) / (hi - lo)
        out = np.zeros((len(xy), 2))
        out[:, 0] = np.clip(4.0 * s * (1.0 - s), 0.0, None)
        return out

    return g


PROBLEMS = ("BFS2D", "Channel2D", "CylinderFile", "Custom")


@dataclass
class StokesProblem:
    """Boundary and body-force data.

    ``velocity(xy)`` gives Dirichlet values on every Dirichlet DoF; when it is
    ``None`` the tag rule applies: parabolic profile on inflow edges, zero on
    no-slip edges. ``forcing(xy)`` defaults to zero.
    """

    name: str = "Custom"
    velocity: object = None
    forcing: object = None

    def dirichlet_values(self, space, dofs):
        xy = space.coords[dofs]
        if self.velocity is not None:
            return np.asarray(self.velocity(xy), dtype=np.float64).reshape(-1, 2)
        vals = np.zeros((dofs.size, 2))
        inflow = space.boundary_dofs(lambda t: t is BoundaryTag.DIRICHLET_INFLOW)
        on_inflow = np.isin(dofs, inflow)
        if on_inflow.any():
            vals[on_inflow] = parabolic_inflow(space.mesh)(xy[on_inflow])
        return vals


def as_problem(problem):
    if isinstance(problem, StokesProblem):
        return problem
    if problem is None:
        return StokesProblem()
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    return StokesProblem(name=problem)


@dataclass
class DirichletData:
    dofs: np.ndarray
    values: np.ndarray


@dataclass(eq=False)
class SaddleSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    Ap: sp.csr_matrix
    Mp: sp.csr_matrix
    rhs: np.ndarray
    nx: int
    ny: int
    n_p: int
    disc: str
    velocity_space: FunctionSpace
    pressure_space: FunctionSpace
    free: np.ndarray
    dirichlet: DirichletData
    A_scalar: sp.csr_matrix
    B_full: sp.csr_matrix
    problem: StokesProblem
    extras: dict = field(default_factory=dict)

    @property
    def n_u(self):
        return self.nx + self.ny

    @property
    def n(self):
        return self.n_u + self.n_p

    @property
    def sizes(self):
        return self.nx, self.ny, self.n_p

    @cached_property
    def K(self):
        return saddle_matrix(self.A, self.B)

    @property
    def mesh(self):
        return self.pressure_space.mesh

    @property
    def velocity_coords(self):
        return self.velocity_space.coords[self.free]

    @property
    def pressure_coords(self):
        return self.pressure_space.coords

    @property
    def enclosed(self):
        return not self.velocity_space.mesh.has_tag(BoundaryTag.NEUMANN)

    def velocity_block(self, comp):
        return self.A[comp * self.nx:(comp + 1) * self.nx][:, comp * self.nx:(comp + 1) * self.nx]

    def expand_velocity(self, u):
        """Full nodal velocity ``(N, 2)`` from a reduced velocity vector."""
        N = self.velocity_space.n_dofs
        full = np.zeros((N, 2))
        full[self.dirichlet.dofs] = self.dirichlet.values
        full[self.free, 0] = u[:self.nx]
        full[self.free, 1] = u[self.nx:self.n_u]
        return full


def _reduce_pattern(G, free, N):
    G = canonicalize(G[:, np.concatenate([free, free + N])])
    G.data[:] = 1.0
    return G


def _eliminate(A_scalar, B_full, vspace, problem):
    N = vspace.n_dofs
    dofs = vspace.boundary_dofs(lambda t: t.is_dirichlet)
    free = np.setdiff1d(np.arange(N), dofs)
    values = problem.dirichlet_values(vspace, dofs)
    Ared = A_scalar[free][:, free]
    A = block_diag([Ared, Ared])
    cols = np.concatenate([free, free + N])
    B = canonicalize(B_full[:, cols])
    return A, B, free, DirichletData(dofs, values)


def assemble_rhs(problem, sys):
    """Right-hand side with Dirichlet data lifted; body force from ``problem``.

    Raises
    ------
    CompatibilityError
        For an enclosed flow whose boundary data has nonzero net flux.
    ValueError
        If the mesh tags do not fit the named problem.
    """
    problem = as_problem(problem)
    mesh = sys.velocity_space.mesh
    if problem.name in ("BFS2D", "Channel2D", "CylinderFile"):
        if not (mesh.has_tag(BoundaryTag.DIRICHLET_INFLOW) and mesh.has_tag(BoundaryTag.NEUMANN)):
            raise ValueError(f"problem {problem.name} needs inflow and outflow tagged edges")
    vspace = sys.velocity_space
    N = vspace.n_dofs
    dofs = sys.dirichlet.dofs
    values = problem.dirichlet_values(vspace, dofs)
    if sys.enclosed:
        flux, scale = boundary_flux(vspace, values, dofs)
        if abs(flux) > 1e-4 * scale + 1e-14:
            raise CompatibilityError(f"enclosed flow with net boundary flux {flux:.3e}")
    g = np.zeros(2 * N)
    g[dofs] = values[:, 0]
    g[dofs + N] = values[:, 1]
    if problem.forcing is not None:
        F = load_vector(vspace, problem.forcing)
    else:
        F = np.zeros(2 * N)
    Ag = np.concatenate([sys.A_scalar @ g[:N], sys.A_scalar @ g[N:]])
    ru = (F - Ag)
    ru = np.concatenate([ru[sys.free], ru[N + sys.free]])
    rp = -(sys.B_full @ g)
    sys.dirichlet = DirichletData(dofs, values)
    return np.concatenate([ru, rp])


def boundary_flux(vspace, values, dofs):
    """Net outward flux of the Dirichlet data and the sum of its absolute edge fluxes."""
    mesh = vspace.mesh
    lookup = np.full(vspace.n_dofs, -1)
    lookup[dofs] = np.arange(dofs.size)
    total = 0.0
    scale = 0.0
    centroid = mesh.vertices.mean(axis=0)
    tri_of_edge = _boundary_edge_triangles(mesh)
    for k, ((a, b), tag) in enumerate(zip(mesh.boundary, mesh.tags)):
        if not tag.is_dirichlet:
            continue
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        t = vspace.mesh.vertices[mesh.triangles[tri_of_edge[k]]].mean(axis=0) if tri_of_edge[k] >= 0 else centroid
        tangent = pb - pa
        normal = np.array([tangent[1], -tangent[0]])
        if normal @ (0.5 * (pa + pb) - t) < 0:
            normal = -normal
        ga, gb = values[lookup[a]], values[lookup[b]]
        if isinstance(vspace, P2Space):
            gm = values[lookup[mesh.n_vertices + mesh.edge_index([[a, b]])[0]]]
            avg = (ga + 4.0 * gm + gb) / 6.0
        else:
            avg = 0.5 * (ga + gb)
        total += float(avg @ normal)
        scale += abs(float(avg @ normal))
    return total, scale


def _boundary_edge_triangles(mesh):
    idx = mesh.edge_index(mesh.boundary)
    owner = np.full(mesh.n_edges, -1)
    owner[mesh.triangle_edges.ravel()] = np.repeat(np.arange(mesh.n_triangles), 3)
    return owner[idx]


def _finish(A_scalar, B_full, vspace, pspace, Ap, Mp, disc, problem, extras=None, pattern=None):
    problem = as_problem(problem)
    A, B, free, dd = _eliminate(A_scalar, B_full, vspace, problem)
    extras = dict(extras or {})
    if pattern is None:
        pattern = coupling_pattern(vspace, pspace)
    extras["B_pattern"] = _reduce_pattern(pattern, free, vspace.n_dofs)
    sys = SaddleSystem(A, B, Ap, Mp, np.zeros(0), free.size, free.size, pspace.n_dofs, disc,
                       vspace, pspace, free, dd, A_scalar, B_full, problem, extras)
    sys.rhs = assemble_rhs(problem, sys)
    return sys


def assemble_taylor_hood(mesh, problem=None):
    """P2/P1 Stokes system on ``mesh``."""
    mesh.validate()
    V = P2Space(mesh)
    Q = P1Space(mesh)
    return _finish(stiffness_matrix(V), divergence_matrix(V, Q), V, Q,
                   stiffness_matrix(Q), mass_matrix(Q), "TH", problem)


def assemble_scott_vogelius(mesh, problem=None, force=False):
    """P2/P1disc Stokes system; ``mesh`` must come from :func:`barycentric_refine`."""
    if not mesh.barycentric and not force:
        raise StabilityError("Scott-Vogelius P2/P1disc is only inf-sup stable on barycentric meshes")
    mesh.validate()
    V = P2Space(mesh)
    Q = P1DiscSpace(mesh)
    Qc = P1Space(mesh)
    extras = {
        "pressure_cells": Q.cell_dofs,
        "Ap_dg": penalized_broken_laplacian(Qc),
    }
    return _finish(stiffness_matrix(V), divergence_matrix(V, Q), V, Q,
                   stiffness_matrix(Qc), mass_matrix(Q), "SV", problem, extras)


def geometric_interpolation(rmap):
    """P1 interpolation from a parent mesh to its quadrisection."""
    kind = rmap.kind
    n_child = kind.size
    n_parent = int((kind == VertexOrigin.COARSE_VERTEX).sum())
    rows, cols, vals = [], [], []
    cv = np.flatnonzero(kind == VertexOrigin.COARSE_VERTEX)
    rows.append(cv)
    cols.append(rmap.parents[cv, 0])
    vals.append(np.ones(cv.size))
    mv = np.flatnonzero(kind == VertexOrigin.EDGE_MIDPOINT)
    for k in range(2):
        rows.append(mv)
        cols.append(rmap.parents[mv, k])
        vals.append(np.full(mv.size, 0.5))
    if np.any(kind == VertexOrigin.BARYCENTER):
        raise LineageError("geometric interpolation expects a quadrisection map")
    return canonicalize(sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_child, n_parent)))


def assemble_iso(mesh, mesh_fine, rmap, problem=None):
    """P1isoP2/P1 system: P1 velocity on ``mesh_fine``, P1 pressure on ``mesh``.

    The divergence block is assembled as P1/P1 on the fine mesh and its
    pressure rows are coarsened with the geometric interpolation ``E``:
    ``B = E^T B_fine``.
    """
    if rmap.parent_id != mesh.mesh_id or rmap.child_id != mesh_fine.mesh_id:
        raise LineageError("refinement map does not connect the given meshes")
    if mesh_fine.n_vertices != mesh.n_vertices + mesh.n_edges or \
            mesh_fine.n_triangles != 4 * mesh.n_triangles:
        raise LineageError("fine mesh is not a quadrisection of the coarse mesh")
    Vf = P1Space(mesh_fine)
    Qf = P1Space(mesh_fine)
    Q = P1Space(mesh)
    E = geometric_interpolation(rmap)
    B_full = canonicalize(E.T @ divergence_matrix(Vf, Qf), drop_tol=DROP_TOL)
    pattern = canonicalize(abs(E.T) @ coupling_pattern(Vf, Qf))
    return _finish(stiffness_matrix(Vf), B_full, Vf, Q, stiffness_matrix(Q), mass_matrix(Q),
                   "ISO", problem, {"E": E}, pattern)


def iso_companion(sys):
    """The ISO system co-located with a TH or SV system on the same mesh."""
    from .mesh import quadrisect
    mesh = sys.mesh
    fine, rmap = quadrisect(mesh)
    return assemble_iso(mesh, fine, rmap, sys.problem)


def l2_error(space, coeffs, exact, degree=8):
    """L2 norm of ``u_h - exact`` for scalar or vector coefficients."""
    lam, w = triangle_quadrature(degree)
    _, area = barycentric_gradients(space.mesh)
    uh = space.evaluate(coeffs, lam)
    pts = space.physical_points(lam)
    ue = np.asarray(exact(pts.reshape(-1, 2))).reshape(uh.shape)
    diff = (uh - ue) ** 2
    if diff.ndim == 3:
        diff = diff.sum(axis=2)
    return float(np.sqrt(np.einsum("q,t,tq->", w, 2.0 * area, diff)))


def elementwise_divergence(space, u_full, degree=4):
    """Per-triangle ``int_T |div u_h|^2`` for a nodal vector field ``(N, 2)``."""
    lam, w = triangle_quadrature(degree)
    grads, area = space.gradients(lam)
    c = u_full[space.cell_dofs]
    div = np.einsum("tqb,tb->tq", grads[..., 0], c[..., 0]) + np.einsum("tqb,tb->tq", grads[..., 1], c[..., 1])
    return np.einsum("q,t,tq->t", w, 2.0 * area, div ** 2)
