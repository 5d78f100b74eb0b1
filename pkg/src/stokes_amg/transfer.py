"""Transfer operators between a high-order system and its ISO companion."""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ColocationError, DimensionMismatch, SolverStagnation
from .krylov import fgmres
from .sparse import canonicalize, transpose

TH_INJECTION = "TH_injection"
SV_PROJECTION = "SV_projection"
COLOCATION_TOL = 1e-14


def _check_colocated(a, b, what):
    if a.shape != b.shape:
        raise ColocationError(f"{what}: {a.shape[0]} vs {b.shape[0]} DoFs")
    if a.size and np.abs(a - b).max() > COLOCATION_TOL:
        raise ColocationError(f"{what} DoFs are not co-located")


class MassProjection:
    """``q -> Mcg^{-1} (Mmix q)`` via FGMRES preconditioned by one SA V-cycle."""

    def __init__(self, Mcg, Mmix, tol=1e-12, restart=20, maxiter=200, opts=None):
        from .amg import build_scalar_hierarchy, mass_options, scalar_vcycle
        if Mmix.shape[0] != Mcg.shape[0]:
            raise DimensionMismatch("mixed mass matrix rows must match the cg mass matrix")
        self.Mcg = canonicalize(Mcg)
        self.Mmix = canonicalize(Mmix)
        self.tol, self.restart, self.maxiter = tol, restart, maxiter
        self.hierarchy = build_scalar_hierarchy(self.Mcg, opts=opts or mass_options())
        self._vcycle = scalar_vcycle
        self.iterations = []

    @property
    def shape(self):
        return self.Mmix.shape

    def solve(self, rhs):
        x, rep = fgmres(self.Mcg, rhs, M=lambda v: self._vcycle(self.hierarchy, v),
                        restart=self.restart, tol=self.tol, maxiter=self.maxiter)
        self.iterations.append(rep.iterations)
        if not rep.converged:
            raise SolverStagnation(
                f"mass projection stalled at relative residual {rep.final_residual:.3e}")
        return x, rep

    def __matmul__(self, q):
        return self.solve(self.Mmix @ np.asarray(q, dtype=np.float64))[0]

    __call__ = __matmul__


@dataclass
class TransferPair:
    """``P0`` maps low-order to high-order vectors, ``R0`` the reverse.

    ``R0`` is either a sparse matrix or, for the projection restriction, a
    block operator whose pressure part is a :class:`MassProjection`.
    """

    P0: sp.csr_matrix
    R0: object
    mode: str
    sizes0: tuple
    sizes1: tuple
    pressure_restrict: MassProjection | None = None
    extras: dict = field(default_factory=dict)

    def prolong(self, x1):
        return self.P0 @ x1

    def restrict(self, r0):
        if self.pressure_restrict is None:
            return self.R0 @ r0
        n_u = self.sizes0[0] + self.sizes0[1]
        return np.concatenate([r0[:n_u], self.pressure_restrict @ r0[n_u:]])


def build_th_transfer(sys0, sys1):
    """Injection between co-located TH and ISO systems."""
    _check_colocated(sys0.velocity_coords, sys1.velocity_coords, "velocity")
    _check_colocated(sys0.pressure_coords, sys1.pressure_coords, "pressure")
    if sys0.sizes != sys1.sizes:
        raise ColocationError("block sizes differ")
    P0 = sp.identity(sys0.n, format="csr")
    return TransferPair(P0, transpose(P0), TH_INJECTION, sys0.sizes, sys1.sizes)


def build_sv_pressure_interp(mesh, cell_dofs=None):
    """Duplicate each vertex value into every discontinuous DoF at that vertex."""
    tri = mesh.triangles
    dg = np.arange(3 * tri.shape[0]).reshape(-1, 3) if cell_dofs is None else np.asarray(cell_dofs)
    rows = dg.ravel()
    cols = tri.ravel()
    return canonicalize(sp.csr_matrix((np.ones(rows.size), (rows, cols)),
                                      shape=(rows.size, mesh.n_vertices)))


def build_sv_pressure_restrict(Mcg, Mmix, tol=1e-12, **kw):
    return MassProjection(Mcg, Mmix, tol=tol, **kw)


def build_sv_transfer(sys0, sys1, tol=1e-12, opts=None):
    """Velocity injection plus pressure duplication / L2 projection.

    ``opts`` configures the mass-matrix hierarchy of the projection solve.
    """
    _check_colocated(sys0.velocity_coords, sys1.velocity_coords, "velocity")
    if sys0.n_u != sys1.n_u:
        raise ColocationError("velocity sizes differ")
    Pp = build_sv_pressure_interp(sys0.mesh, sys0.extras.get("pressure_cells"))
    if Pp.shape != (sys0.n_p, sys1.n_p):
        raise DimensionMismatch("pressure spaces do not match the barycentric mesh")
    Mmix = canonicalize(Pp.T @ sys0.Mp)
    proj = build_sv_pressure_restrict(sys1.Mp, Mmix, tol=tol, opts=opts)
    P0 = canonicalize(sp.block_diag([sp.identity(sys0.n_u), Pp], format="csr"))
    return TransferPair(P0, None, SV_PROJECTION, sys0.sizes, sys1.sizes,
                        pressure_restrict=proj, extras={"Mmix": Mmix, "Pp": Pp})


def apply_eta_weighting(r, eta_u, eta_p, sizes):
    nx, ny, n_p = sizes
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] != nx + ny + n_p:
        raise DimensionMismatch("residual length does not match block sizes")
    out = r.copy()
    out[:nx + ny] *= eta_u
    out[nx + ny:] *= eta_p
    return out
