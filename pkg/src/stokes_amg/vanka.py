"""Additive Vanka relaxation with block-LU patch solves.

A patch couples one (or, on the Scott-Vogelius fine level, three) pressure
seeds with every velocity DoF in the nonzero pattern of the seed rows of
``B``. Each patch matrix ``[[A, B^T], [B, 0]]`` is factored as

    [[A, 0], [B, S]] [[I, A^{-1} B^T], [0, I]],   S = -B A^{-1} B^T,

and solved with the precomputed ``Uhat = -A^{-1} B^T``,
``Bhat = -S^{-1} B A^{-1}`` and ``S^{-1}``. The velocity block of every patch
is block diagonal across the two components, so only the two component
inverses are stored.

Patches of similar size are batched (padded with identity rows) so that
setup and application run as stacked dense kernels.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, SingularPatch
from .krylov import fgmres


@dataclass
class VankaPatch:
    pressure: np.ndarray
    velocity: np.ndarray
    nx: int

    @property
    def x(self):
        return self.velocity[self.velocity < self.nx]

    @property
    def y(self):
        return self.velocity[self.velocity >= self.nx]

    @property
    def size(self):
        return self.velocity.size + self.pressure.size


@dataclass
class PatchSet:
    """Flat storage for all patches of one level.

    ``seeds`` is ``(n_patches, n_seeds)`` with pressure indices local to the
    pressure block; ``vel_ptr``/``vel_idx`` hold the sorted velocity indices of
    each patch CSR-style.
    """

    seeds: np.ndarray
    vel_ptr: np.ndarray
    vel_idx: np.ndarray
    nx: int
    ny: int
    n_p: int

    def __len__(self):
        return self.seeds.shape[0]

    def __getitem__(self, i):
        v = self.vel_idx[self.vel_ptr[i]:self.vel_ptr[i + 1]]
        return VankaPatch(self.seeds[i] + self.nx + self.ny, v, self.nx)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def n(self):
        return self.nx + self.ny + self.n_p

    def sizes(self):
        return np.diff(self.vel_ptr) + self.seeds.shape[1]

    def multiplicity(self):
        """Number of patches containing each DoF of the level (integers)."""
        counts = np.bincount(self.vel_idx, minlength=self.n)
        counts += np.bincount(self.seeds.ravel() + self.nx + self.ny, minlength=self.n)
        return counts


def build_patches(K, sizes, seeds=None, pattern=None):
    """One patch per pressure row of ``B`` (or per row group in ``seeds``).

    Parameters
    ----------
    K : csr_matrix
        Level saddle-point operator.
    sizes : (nx, ny, n_p)
    seeds : array (n_patches, k), optional
        Pressure indices (local to the pressure block) to group per patch,
        e.g. the three element DoFs of a discontinuous pressure.
    pattern : sparse matrix (n_p, nx + ny), optional
        Structural coupling pattern to use instead of the nonzeros of ``B``;
        on finite-element levels some couplings cancel exactly in ``B``.
    """
    nx, ny, n_p = (int(s) for s in sizes)
    n_u = nx + ny
    if K.shape != (n_u + n_p, n_u + n_p):
        raise DimensionMismatch(f"K is {K.shape}, block sizes give {n_u + n_p}")
    if pattern is not None:
        if pattern.shape != (n_p, n_u):
            raise DimensionMismatch("coupling pattern does not match the pressure-velocity block")
        B = sp.csr_matrix(pattern)
    else:
        B = sp.csr_matrix(K[n_u:, :n_u])
    B.eliminate_zeros()
    B.sort_indices()
    if seeds is None:
        seeds = np.arange(n_p, dtype=np.int64)[:, None]
        vel_ptr = B.indptr.astype(np.int64).copy()
        vel_idx = B.indices.astype(np.int64).copy()
    else:
        seeds = np.asarray(seeds, dtype=np.int64)
        if seeds.ndim == 1:
            seeds = seeds[:, None]
        rows = seeds.ravel()
        lens = np.diff(B.indptr)[rows]
        starts = B.indptr[rows]
        owner = np.repeat(np.repeat(np.arange(seeds.shape[0]), seeds.shape[1]), lens)
        offs = np.arange(lens.sum()) - np.repeat(np.cumsum(lens) - lens, lens)
        cols = B.indices[np.repeat(starts, lens) + offs].astype(np.int64)
        keys = np.unique(owner * n_u + cols)
        own = keys // n_u
        vel_idx = keys % n_u
        vel_ptr = np.zeros(seeds.shape[0] + 1, dtype=np.int64)
        np.add.at(vel_ptr, own + 1, 1)
        vel_ptr = np.cumsum(vel_ptr)
    empty = np.flatnonzero(np.diff(vel_ptr) == 0)
    if empty.size:
        raise SingularPatch(int(empty[0]), "pressure seed without velocity couplings")
    return PatchSet(seeds, vel_ptr, vel_idx, nx, ny, n_p)


def _bucket(m):
    if m <= 8:
        return max(m, 1)
    if m <= 32:
        return int(np.ceil(m / 2) * 2)
    return int(np.ceil(m / 8) * 8)


def _extract(M, rows, cols, pad):
    """Dense sub-blocks ``M[rows[g], cols[g]]`` for a stack of index sets.

    ``rows`` and ``cols`` are ``(G, r)`` and ``(G, c)``; the index ``pad``
    marks padding and yields empty rows/columns. ``cols`` must be sorted per
    row of the stack.
    """
    G, r = rows.shape
    c = cols.shape[1]
    out = np.zeros((G, r, c))
    indptr = np.append(M.indptr, M.indptr[-1])
    flat = rows.ravel()
    starts = indptr[flat]
    lens = indptr[flat + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return out
    owner = np.repeat(np.arange(flat.size), lens)
    offs = np.arange(total) - np.repeat(np.cumsum(lens) - lens, lens)
    pos = np.repeat(starts, lens) + offs
    gcol = M.indices[pos].astype(np.int64)
    vals = M.data[pos]
    g = owner // r
    i = owner % r
    stride = pad + 1
    colkeys = (np.arange(G)[:, None] * stride + cols).ravel()
    q = g * stride + gcol
    loc = np.searchsorted(colkeys, q)
    loc = np.minimum(loc, colkeys.size - 1)
    hit = colkeys[loc] == q
    j = loc - g * c
    out[g[hit], i[hit], j[hit]] = vals[hit]
    return out


@dataclass
class _Group:
    ix: np.ndarray
    iy: np.ndarray
    ip: np.ndarray
    patch_ids: np.ndarray
    Ainv_x: np.ndarray
    Ainv_y: np.ndarray
    Uhat_x: np.ndarray
    Uhat_y: np.ndarray
    Bhat_x: np.ndarray
    Bhat_y: np.ndarray
    Sinv: np.ndarray


@dataclass
class VankaFactorization:
    patches: PatchSet
    groups: list
    weights: np.ndarray
    stats: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.patches.n


def _invert_stack(M, patch_ids, what):
    try:
        return np.linalg.inv(M)
    except np.linalg.LinAlgError:
        for k in range(M.shape[0]):
            try:
                np.linalg.inv(M[k])
            except np.linalg.LinAlgError:
                raise SingularPatch(int(patch_ids[k]), f"singular {what} block") from None
        raise


def factor_patches(K, patches, chunk=4096):
    """Precompute the block-LU factors of every patch."""
    nx, ny, n_p = patches.nx, patches.ny, patches.n_p
    n = patches.n
    if K.shape != (n, n):
        raise DimensionMismatch("patch set does not match operator size")
    K = sp.csr_matrix(K)
    K.sort_indices()
    pad = n
    counts = np.diff(patches.vel_ptr)
    starts = patches.vel_ptr[:-1]
    # velocity indices are sorted, so the x part precedes the y part
    n_x_local = np.array([np.searchsorted(patches.vel_idx[s:s + c], nx) for s, c in zip(starts, counts)])
    n_y_local = counts - n_x_local
    ns = patches.seeds.shape[1]
    bx = np.array([_bucket(m) for m in n_x_local])
    by = np.array([_bucket(m) for m in n_y_local])
    keys = bx * 100003 + by
    groups = []
    order = np.argsort(keys, kind="stable")
    uniq, first = np.unique(keys[order], return_index=True)
    bounds = list(first) + [order.size]
    for gi in range(len(uniq)):
        ids_all = order[bounds[gi]:bounds[gi + 1]]
        for c0 in range(0, ids_all.size, chunk):
            ids = ids_all[c0:c0 + chunk]
            px, py = int(bx[ids[0]]), int(by[ids[0]])
            G = ids.size
            ix = np.full((G, px), pad, dtype=np.int64)
            iy = np.full((G, py), pad, dtype=np.int64)
            for k, pid in enumerate(ids):
                v = patches.vel_idx[starts[pid]:starts[pid] + counts[pid]]
                mx = n_x_local[pid]
                ix[k, :mx] = v[:mx]
                iy[k, :v.size - mx] = v[mx:]
            ip = patches.seeds[ids] + nx + ny
            groups.append(_factor_group(K, ix, iy, ip, ids, pad))
    mult = patches.multiplicity()
    weights = np.zeros(n + 1)
    weights[:n] = 1.0 / np.maximum(mult, 1)
    fact = VankaFactorization(patches, groups, weights)
    fact.stats = storage_report(patches, n_x_local, n_y_local)
    return fact


def _factor_group(K, ix, iy, ip, ids, pad):
    Ax = _extract(K, ix, ix, pad)
    Ay = _extract(K, iy, iy, pad)
    for A, I in ((Ax, ix), (Ay, iy)):
        padded = I == pad
        g, k = np.nonzero(padded)
        A[g, k, k] = 1.0
    Bx = _extract(K, ip, ix, pad)
    By = _extract(K, ip, iy, pad)
    Ainv_x = _invert_stack(Ax, ids, "velocity")
    Ainv_y = _invert_stack(Ay, ids, "velocity")
    AiBtx = Ainv_x @ Bx.transpose(0, 2, 1)
    AiBty = Ainv_y @ By.transpose(0, 2, 1)
    S = -(Bx @ AiBtx + By @ AiBty)
    scale = np.abs(Bx).max(axis=(1, 2)) ** 2 / np.maximum(np.abs(Ax).max(axis=(1, 2)), 1e-300)
    if S.shape[1] == 1:
        bad = np.abs(S[:, 0, 0]) <= 1e-13 * np.maximum(scale, 1e-300)
    else:
        bad = np.linalg.cond(S) > 1e13
    if bad.any():
        raise SingularPatch(int(ids[np.flatnonzero(bad)[0]]), "singular Schur complement")
    Sinv = _invert_stack(S, ids, "Schur complement")
    BAx = Bx @ Ainv_x
    BAy = By @ Ainv_y
    return _Group(ix, iy, ip, ids, Ainv_x, Ainv_y, -AiBtx, -AiBty,
                  -(Sinv @ BAx), -(Sinv @ BAy), Sinv)


def storage_report(patches, n_x_local, n_y_local):
    ns = patches.seeds.shape[1]
    mv = n_x_local + n_y_local
    sizes = mv + ns
    a_factors = int((n_x_local ** 2 + n_y_local ** 2).sum())
    full_inverse = int((sizes ** 2).sum())
    extra = int((2 * ns * mv + ns * ns).sum())
    return {
        "count": int(len(patches)),
        "min_size": int(sizes.min()) if sizes.size else 0,
        "max_size": int(sizes.max()) if sizes.size else 0,
        "mean_size": float(sizes.mean()) if sizes.size else 0.0,
        "a_factor_entries": a_factors,
        "schur_entries": extra,
        "full_inverse_entries": full_inverse,
        "storage_bytes": 8 * (a_factors + extra),
    }


def solve_patches(F, r):
    """Local solutions of every patch, returned group by group (unweighted)."""
    r_ext = np.append(np.asarray(r, dtype=np.float64), 0.0)
    out = []
    for g in F.groups:
        rx = r_ext[g.ix][..., None]
        ry = r_ext[g.iy][..., None]
        rp = r_ext[g.ip][..., None]
        xp = g.Bhat_x @ rx + g.Bhat_y @ ry + g.Sinv @ rp
        xx = g.Ainv_x @ rx + g.Uhat_x @ xp
        xy = g.Ainv_y @ ry + g.Uhat_y @ xp
        out.append((xx[..., 0], xy[..., 0], xp[..., 0]))
    return out


def apply_vanka(F, r):
    """One additive sweep ``sum_i V_i^T W_i K_i^{-1} V_i r``."""
    r = np.asarray(r, dtype=np.float64)
    if r.shape[0] != F.n:
        raise DimensionMismatch("residual length does not match the level")
    n = F.n
    delta = np.zeros(n + 1)
    w = F.weights
    for g, (xx, xy, xp) in zip(F.groups, solve_patches(F, r)):
        for idx, val in ((g.ix, xx), (g.iy, xy), (g.ip, xp)):
            delta += np.bincount(idx.ravel(), weights=(val * w[idx]).ravel(), minlength=n + 1)
    return delta[:n]


KRYLOV = "krylov"
STATIONARY = "stationary"


def relax(K, F, x, b, mode=KRYLOV, sweeps=2, omega=1.0):
    """Vanka relaxation on ``K x = b``.

    ``mode="krylov"`` runs ``sweeps`` FGMRES iterations (one cycle, no
    restart) on the residual equation with one Vanka sweep as preconditioner,
    starting from a zero correction; ``mode="stationary"`` applies ``sweeps``
    damped sweeps ``x <- x + omega * M^{-1} (b - K x)``.
    """
    x = np.array(x, dtype=np.float64, copy=True)
    if sweeps <= 0:
        return x
    if mode == KRYLOV:
        r = b - K @ x
        if not np.any(r):
            return x
        dx, _ = fgmres(K, r, M=lambda v: apply_vanka(F, v), restart=sweeps, tol=0.0,
                       maxiter=sweeps, check_residual=False)
        return x + dx
    if mode == STATIONARY:
        for _ in range(sweeps):
            x += omega * apply_vanka(F, b - K @ x)
        return x
    raise ValueError(f"unknown relaxation mode {mode!r}")
