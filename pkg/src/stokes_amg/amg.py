"""Smoothed aggregation: scalar hierarchies and the monolithic Stokes hierarchy.

The monolithic hierarchy builds one scalar SA hierarchy per field (the two
velocity components of ``A`` and an auxiliary pressure Laplacian), stacks the
prolongators block-diagonally and forms Galerkin coarse saddle-point operators.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DimensionMismatch
from .krylov import fgmres
from .sparse import (DEFAULT_SEED, block_diag, canonicalize, dense_lu_factor, dense_lu_solve,
                     galerkin_triple, inverse_diagonal, power_rho_estimate, transpose)
from . import vanka as vk

EVOLUTION = "evolution"
EVOLUTION_RATIO = "evolution_ratio"
SYMMETRIC = "symmetric"
SOC_CHOICES = (EVOLUTION, EVOLUTION_RATIO, SYMMETRIC)
DEFAULT_THETA = {EVOLUTION: 2.0, EVOLUTION_RATIO: 0.5, SYMMETRIC: 0.25}
DENSE_COARSE_LIMIT = 3000


@dataclass
class AMGOptions:
    soc: str = EVOLUTION
    theta: float | None = None
    soc_k: int = 4
    omega_frac: float = 4.0 / 3.0
    rho_iters: int = 10
    coarse_size: int = 600
    max_levels: int = 12
    smooth_pressure: bool = True
    order: str = "index"
    max_ratio_drift: float | None = 2.0
    seed: int = DEFAULT_SEED

    @property
    def threshold(self):
        return DEFAULT_THETA[self.soc] if self.theta is None else float(self.theta)


def mass_options():
    """Options for mass-matrix hierarchies: plain aggregation on the full graph.

    Mass matrices are well conditioned and isotropic, so the Laplacian-tuned
    strength filters mark every coupling weak and aggregation stalls at once.
    """
    return AMGOptions(soc=SYMMETRIC, theta=0.0)


# -- strength of connection ---------------------------------------------------

@dataclass
class StrengthGraph:
    """Strong couplings of a matrix; ``C`` stores strength values, diagonal 1."""

    C: sp.csr_matrix

    @property
    def n(self):
        return self.C.shape[0]

    def keep(self):
        """Boolean keep/drop mask on the off-diagonal pattern as a matrix."""
        M = self.C.copy()
        M.setdiag(0)
        M.eliminate_zeros()
        return M.astype(bool)

    def degree(self):
        return np.diff(self.C.indptr)


def _graph_from_mask(rows, cols, vals, n):
    S = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    S = S.maximum(S.T)
    S = S + sp.eye(n, format="csr")
    S = sp.csr_matrix(S)
    S.sum_duplicates()
    S.sort_indices()
    return StrengthGraph(S)


def _offdiag(A):
    A = sp.coo_matrix(A)
    off = A.row != A.col
    return A.row[off], A.col[off], A.data[off]


def symmetric_soc(A, theta=0.25):
    """Keep ``(i, j)`` when ``|a_ij| >= theta * sqrt(|a_ii a_jj|)``."""
    A = canonicalize(A)
    d = np.abs(inverse_diagonal(A)) ** -1
    r, c, v = _offdiag(A)
    s = np.abs(v) / np.sqrt(d[r] * d[c])
    keep = s >= theta
    return _graph_from_mask(r[keep], c[keep], s[keep], A.shape[0])


def _evolved_deltas(A, k, omega_frac, rho_iters, seed):
    """``(I - w D^{-1} A)^k`` sampled on the pattern of ``A``, with its diagonal."""
    n = A.shape[0]
    Dinv = inverse_diagonal(A)
    rho = power_rho_estimate(A, Dinv, iters=rho_iters, seed=seed)
    omega = omega_frac / rho if rho > 0 else 1.0
    S = sp.eye(n, format="csr") - omega * (sp.diags(Dinv) @ A)
    Z = sp.eye(n, format="csr")
    for _ in range(max(int(k), 1)):
        Z = Z @ S
    Z = sp.csr_matrix(Z)
    r, c, _ = _offdiag(A)
    zij = np.asarray(Z[r, c]).ravel() if r.size else np.zeros(0)
    return r, c, zij, Z.diagonal()


def evolution_soc(A, theta=None, k=2, rho_iters=10, seed=DEFAULT_SEED, form="distance"):
    """Smoothed-delta strength measure.

    Column ``j`` of ``Z = (I - w D^{-1} A)^k`` is a relaxed delta at ``j``,
    sampled on the off-diagonal pattern of ``A``; ``q_ij = Z_ij / Z_jj``.

    ``form="distance"`` (default) uses the near-nullspace approximation error
    ``d_ij = |1 - 1 / q_ij|`` (``w = 1/rho``): couplings with ``q_ij <= 0`` are
    weak and ``(i, j)`` is kept when ``d_ij <= theta * min_m d_mj`` (default
    ``theta = 4``). ``form="ratio"`` keeps ``|q_ij| >= theta * max_m |q_mj|``
    (``w = 4 / (3 rho)``, default ``theta = 0.5``). Either graph is symmetrized
    by union.
    """
    A = canonicalize(A)
    n = A.shape[0]
    if form == "ratio":
        theta = 0.5 if theta is None else theta
        r, c, z, zd = _evolved_deltas(A, k, 4.0 / 3.0, rho_iters, seed)
        s = np.abs(z) / np.where(zd[c] != 0, np.abs(zd[c]), 1.0)
        colmax = np.zeros(n)
        np.maximum.at(colmax, c, s)
        keep = (s >= theta * colmax[c]) & (s > 0)
        return _graph_from_mask(r[keep], c[keep], s[keep], n)
    if form != "distance":
        raise ValueError(f"unknown evolution measure form {form!r}")
    theta = 4.0 if theta is None else theta
    r, c, z, zd = _evolved_deltas(A, k, 1.0, rho_iters, seed)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = z / zd[c]
        valid = (q > 0) & (q < 1e4) & np.isfinite(q)
        d = np.where(valid, np.abs(1.0 - 1.0 / np.where(valid, q, 1.0)), np.inf)
    d[valid & (d < np.sqrt(np.finfo(float).eps))] = 1e-4
    colmin = np.full(n, np.inf)
    np.minimum.at(colmin, c, d)
    keep = valid & (d <= theta * colmin[c])
    return _graph_from_mask(r[keep], c[keep], 1.0 / d[keep], n)


def strength(A, opts):
    if opts.soc == EVOLUTION:
        return evolution_soc(A, opts.threshold, opts.soc_k, opts.rho_iters, opts.seed)
    if opts.soc == EVOLUTION_RATIO:
        return evolution_soc(A, opts.threshold, opts.soc_k, opts.rho_iters, opts.seed, form="ratio")
    if opts.soc == SYMMETRIC:
        return symmetric_soc(A, opts.threshold)
    raise ValueError(f"unknown strength measure {opts.soc!r}")


# -- aggregation --------------------------------------------------------------

@dataclass
class Aggregation:
    labels: np.ndarray
    count: int

    def sizes(self):
        return np.bincount(self.labels, minlength=self.count)

    def members(self, c):
        return np.flatnonzero(self.labels == c)


def aggregate(g, order="degree"):
    """Greedy three-pass aggregation.

    With ``order="degree"`` nodes are visited in order of decreasing strong
    degree (stable in the node index), which places seeds away from boundaries
    first; ``order="index"`` visits them in index order.
    """
    C = g.C if isinstance(g, StrengthGraph) else sp.csr_matrix(g)
    n = C.shape[0]
    indptr = C.indptr.tolist()
    indices = C.indices.tolist()
    data = np.abs(C.data).tolist()
    if order == "degree":
        order = np.argsort(-np.diff(C.indptr), kind="stable").tolist()
    elif order == "index":
        order = list(range(n))
    else:
        raise ValueError(f"unknown visit order {order!r}")
    lab = [-1] * n
    count = 0
    for i in order:
        if lab[i] != -1:
            continue
        nb = indices[indptr[i]:indptr[i + 1]]
        if all(lab[j] == -1 for j in nb):
            for j in nb:
                lab[j] = count
            lab[i] = count
            count += 1
    first = list(lab)
    for i in order:
        if lab[i] != -1:
            continue
        best, best_s = -1, -1.0
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            a = first[j]
            if j == i or a == -1:
                continue
            s = data[p]
            if s > best_s or (s == best_s and a < best):
                best, best_s = a, s
        if best != -1:
            lab[i] = best
    for i in order:
        if lab[i] != -1:
            continue
        lab[i] = count
        for j in indices[indptr[i]:indptr[i + 1]]:
            if lab[j] == -1:
                lab[j] = count
        count += 1
    return Aggregation(np.asarray(lab, dtype=np.int64), count)


# -- prolongators -------------------------------------------------------------

def tentative_prolongator(agg, nullvec=None):
    """Injection of ``nullvec`` on each aggregate, columns normalized.

    Returns ``(T, coarse_nullvec)``.
    """
    n = agg.labels.size
    b = np.ones(n) if nullvec is None else np.asarray(nullvec, dtype=np.float64)
    if b.size != n:
        raise DimensionMismatch("near-nullspace vector length differs from node count")
    norms = np.sqrt(np.bincount(agg.labels, weights=b * b, minlength=agg.count))
    if np.any(norms == 0):
        raise ValueError("near-nullspace vector vanishes on an aggregate")
    T = sp.csr_matrix((b / norms[agg.labels], (np.arange(n), agg.labels)), shape=(n, agg.count))
    return canonicalize(T), norms


def smooth_prolongator(A, T, omega_frac=4.0 / 3.0, rho_iters=10, seed=DEFAULT_SEED):
    """``(I - (omega_frac / rho) D^{-1} A) T`` with ``rho`` from power iteration."""
    Dinv = inverse_diagonal(A)
    rho = power_rho_estimate(A, Dinv, iters=rho_iters, seed=seed)
    w = omega_frac / rho if rho > 0 else 0.0
    return canonicalize(T - w * (sp.diags(Dinv) @ (A @ T)))


# -- scalar hierarchy ---------------------------------------------------------

class CoarseSolver:
    """Direct coarsest-level solve (dense LU, sparse LU above a size limit)."""

    def __init__(self, M, dense_limit=DENSE_COARSE_LIMIT):
        M = sp.csr_matrix(M)
        self.n = M.shape[0]
        self.dense = self.n <= dense_limit
        if self.dense:
            self.lu = dense_lu_factor(M.toarray())
        else:
            self.lu = spla.splu(sp.csc_matrix(M))

    def __call__(self, b):
        if self.dense:
            return dense_lu_solve(self.lu, b)
        return self.lu.solve(np.asarray(b, dtype=np.float64))


@dataclass
class ScalarLevel:
    A: sp.csr_matrix
    Dinv: np.ndarray
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    agg: Aggregation | None = None


@dataclass
class ScalarHierarchy:
    levels: list
    coarse: CoarseSolver | None = None
    stagnated: bool = False

    @property
    def n_levels(self):
        return len(self.levels)

    @property
    def coarsest_size(self):
        return self.levels[-1].A.shape[0]

    def sizes(self):
        return [lev.A.shape[0] for lev in self.levels]


def build_scalar_hierarchy(A, nullvec=None, opts=None, coarse_size=40, max_levels=None,
                           factor_coarse=True, smooth=True):
    opts = opts or AMGOptions()
    max_levels = opts.max_levels if max_levels is None else max_levels
    A = canonicalize(A)
    b = np.ones(A.shape[0]) if nullvec is None else np.asarray(nullvec, dtype=np.float64)
    levels = [ScalarLevel(A, inverse_diagonal(A))]
    stagnated = False
    while len(levels) < max_levels and levels[-1].A.shape[0] > coarse_size:
        lev = levels[-1]
        agg = aggregate(strength(lev.A, opts), opts.order)
        if agg.count > 0.9 * lev.A.shape[0]:
            stagnated = True
            break
        T, b = tentative_prolongator(agg, b)
        P = smooth_prolongator(lev.A, T, opts.omega_frac, opts.rho_iters, opts.seed) if smooth else T
        lev.P, lev.R, lev.agg = P, transpose(P), agg
        Ac = galerkin_triple(P, lev.A)
        levels.append(ScalarLevel(Ac, inverse_diagonal(Ac)))
    h = ScalarHierarchy(levels, stagnated=stagnated)
    if factor_coarse:
        h.coarse = CoarseSolver(levels[-1].A)
    return h


def _jacobi_wrap(A, Dinv, x, b, steps):
    r = b - A @ x
    if steps <= 0 or not np.any(r):
        return x
    dx, _ = fgmres(A, r, M=lambda v: Dinv * v, restart=steps, tol=0.0, maxiter=steps,
                   check_residual=False)
    return x + dx


def scalar_vcycle(h, b, x=None, nu1=2, nu2=2, level=0):
    """One V(nu1, nu2) cycle with Krylov-wrapped Jacobi relaxation."""
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b) if x is None else np.array(x, dtype=np.float64, copy=True)
    lev = h.levels[level]
    if level == h.n_levels - 1:
        if h.coarse is None:
            h.coarse = CoarseSolver(lev.A)
        return x + h.coarse(b - lev.A @ x)
    x = _jacobi_wrap(lev.A, lev.Dinv, x, b, nu1)
    rc = lev.R @ (b - lev.A @ x)
    x = x + lev.P @ scalar_vcycle(h, rc, None, nu1, nu2, level + 1)
    return _jacobi_wrap(lev.A, lev.Dinv, x, b, nu2)


# -- monolithic hierarchy -----------------------------------------------------

@dataclass
class MonolithicLevel:
    K: sp.csr_matrix
    nx: int
    ny: int
    n_p: int
    P: sp.csr_matrix | None = None
    R: sp.csr_matrix | None = None
    vanka: vk.VankaFactorization | None = None
    relax_mode: str = vk.KRYLOV
    omega: float = 1.0

    @property
    def sizes(self):
        return (self.nx, self.ny, self.n_p)

    @property
    def n(self):
        return self.nx + self.ny + self.n_p


@dataclass
class MonolithicHierarchy:
    levels: list
    coarse: CoarseSolver | None = None
    scalar: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    relax_counts: np.ndarray | None = None

    @property
    def n_levels(self):
        return len(self.levels)

    def reset_counters(self):
        self.relax_counts = np.zeros(self.n_levels, dtype=np.int64)

    def stats(self):
        rows = []
        fine_ratio = None
        for i, lev in enumerate(self.levels):
            ratio = (lev.nx + lev.ny) / lev.n_p if lev.n_p else float("inf")
            fine_ratio = ratio if fine_ratio is None else fine_ratio
            row = {
                "level": i,
                "nx": lev.nx, "ny": lev.ny, "n_p": lev.n_p, "n": lev.n,
                "nnz": int(lev.K.nnz),
                "velocity_pressure_ratio": ratio,
                "ratio_drift": ratio / fine_ratio,
                "relax_mode": lev.relax_mode if lev.vanka is not None else "direct",
            }
            if lev.vanka is not None:
                row["patches"] = dict(lev.vanka.stats)
            rows.append(row)
        return {"levels": rows, "n_levels": self.n_levels, "notes": list(self.notes)}


def build_monolithic_hierarchy(K, sizes, A_x, A_y, Ap, opts=None, fine_seeds=None,
                               fine_pattern=None, fine_mode=vk.KRYLOV, fine_omega=1.0, smoothers=True,
                               pressure_shift=False, finest_smoother=True):
    """Monolithic SA hierarchy for a 2D saddle-point operator ``K``.

    Parameters
    ----------
    K : csr_matrix
        Saddle-point operator with blocks ordered (x-velocity, y-velocity,
        pressure).
    sizes : (nx, ny, n_p)
    A_x, A_y, Ap : csr_matrix
        Scalar operators driving the aggregation of each field.
    fine_seeds : array, optional
        Multi-seed Vanka patches for the finest level.
    fine_pattern : sparse matrix, optional
        Structural velocity-pressure pattern of the finest level.
    fine_mode, fine_omega
        Relaxation on the finest level; coarser levels always use the
        Krylov-wrapped form.
    pressure_shift : bool
        Add ``1e-12 * ||K||_inf`` to one coarsest pressure diagonal (enclosed
        flow, where the pressure is only determined up to a constant).
    finest_smoother : bool
        Skip the Vanka setup of the finest level when it is never relaxed.

    Coarsening also stops before a level whose velocity:pressure DoF ratio
    differs from the fine ratio by more than ``opts.max_ratio_drift``; the
    aggregated saddle operator loses stability there.
    """
    opts = opts or AMGOptions()
    nx, ny, n_p = (int(s) for s in sizes)
    K = canonicalize(K)
    if K.shape[0] != nx + ny + n_p or A_x.shape[0] != nx or A_y.shape[0] != ny or Ap.shape[0] != n_p:
        raise DimensionMismatch("block sizes do not match the operators")
    hs = {
        "x": build_scalar_hierarchy(A_x, opts=opts, coarse_size=1, factor_coarse=False),
        "y": build_scalar_hierarchy(A_y, opts=opts, coarse_size=1, factor_coarse=False),
        "p": build_scalar_hierarchy(Ap, opts=opts, coarse_size=1, factor_coarse=False,
                                    smooth=opts.smooth_pressure),
    }
    n_levels = min(h.n_levels for h in hs.values())
    notes = [f"{k}-hierarchy stopped coarsening" for k, h in hs.items()
             if h.stagnated and h.n_levels == n_levels]
    levels = [MonolithicLevel(K, nx, ny, n_p)]
    fine_ratio = (nx + ny) / n_p if n_p else None
    for l in range(n_levels - 1):
        lev = levels[-1]
        if lev.n <= opts.coarse_size:
            break
        Px, Py, Pp = hs["x"].levels[l].P, hs["y"].levels[l].P, hs["p"].levels[l].P
        if opts.max_ratio_drift is not None and fine_ratio:
            drift = (Px.shape[1] + Py.shape[1]) / Pp.shape[1] / fine_ratio
            if not 1.0 / opts.max_ratio_drift <= drift <= opts.max_ratio_drift:
                notes.append(f"stopped at level {l}: velocity/pressure ratio drift {drift:.2f}")
                break
        P = block_diag([Px, Py, Pp])
        Kc = galerkin_triple(P, lev.K)
        lev.P, lev.R = P, transpose(P)
        levels.append(MonolithicLevel(Kc, Px.shape[1], Py.shape[1], Pp.shape[1]))
    H = MonolithicHierarchy(levels, scalar=hs, notes=notes)
    Kc = levels[-1].K
    if pressure_shift:
        Kc = sp.lil_matrix(Kc)
        i = Kc.shape[0] - 1
        Kc[i, i] = Kc[i, i] + 1e-12 * abs(levels[0].K).sum(axis=1).max()
        Kc = sp.csr_matrix(Kc)
    H.coarse = CoarseSolver(Kc)
    if smoothers:
        for i, lev in enumerate(levels[:-1]):
            if i == 0 and not finest_smoother:
                continue
            seeds, pattern = (fine_seeds, fine_pattern) if i == 0 else (None, None)
            lev.vanka = vk.factor_patches(lev.K, vk.build_patches(lev.K, lev.sizes, seeds, pattern))
            if i == 0:
                lev.relax_mode, lev.omega = fine_mode, fine_omega
    H.reset_counters()
    return H


def hierarchy_for(sys, opts=None, pressure_aux=None, **kw):
    """Monolithic hierarchy for an assembled saddle system."""
    Ap = sys.Ap if pressure_aux is None else pressure_aux
    kw.setdefault("fine_pattern", sys.extras.get("B_pattern"))
    return build_monolithic_hierarchy(sys.K, sys.sizes, sys.velocity_block(0),
                                      sys.velocity_block(1), Ap, opts, **kw)


def monolithic_vcycle(H, b, nu1=2, nu2=2, skip=(), level=0):
    """One monolithic V(nu1, nu2) cycle from a zero initial guess.

    Levels listed in ``skip`` perform no relaxation.
    """
    lev = H.levels[level]
    if level == H.n_levels - 1:
        return H.coarse(b)
    relaxed = level not in skip and lev.vanka is not None
    x = np.zeros_like(b)
    if relaxed and nu1 > 0:
        x = vk.relax(lev.K, lev.vanka, x, b, lev.relax_mode, nu1, lev.omega)
        H.relax_counts[level] += 1
    r = b - lev.K @ x if np.any(x) else b
    x = x + lev.P @ monolithic_vcycle(H, lev.R @ r, nu1, nu2, skip, level + 1)
    if relaxed and nu2 > 0:
        x = vk.relax(lev.K, lev.vanka, x, b, lev.relax_mode, nu2, lev.omega)
        H.relax_counts[level] += 1
    return x
