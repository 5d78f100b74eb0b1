"""Sparse and small dense kernels.

Every operator in the package is a ``scipy.sparse.csr_matrix`` in canonical
form: sorted column indices, no duplicates, no stored zeros. The helpers here
enforce that form and add the dimension checks the rest of the code relies on.
"""
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.io

from .errors import DimensionMismatch, SingularMatrix, ZeroDiagonal

DEFAULT_SEED = 1234


def canonicalize(M, drop_tol=0.0):
    """Return ``M`` as CSR with sorted indices, merged duplicates and no zeros.

    Entries with ``|m_ij| <= drop_tol * max|M|`` are removed as well, which is
    used after finite-element assembly to discard round-off cancellations.
    """
    M = sp.csr_matrix(M, dtype=np.float64, copy=True)
    M.sum_duplicates()
    if drop_tol > 0.0 and M.nnz:
        cutoff = drop_tol * np.abs(M.data).max()
        M.data[np.abs(M.data) <= cutoff] = 0.0
    M.eliminate_zeros()
    M.sort_indices()
    return M


def is_canonical(M):
    M = sp.csr_matrix(M)
    if M.indptr[0] != 0 or M.indptr[-1] != M.data.size:
        return False
    if np.any(np.diff(M.indptr) < 0):
        return False
    if np.any(M.data == 0):
        return False
    for i in range(M.shape[0]):
        cols = M.indices[M.indptr[i]:M.indptr[i + 1]]
        if cols.size and (np.any(np.diff(cols) <= 0) or cols[-1] >= M.shape[1]):
            return False
    return True


def spmv(M, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"matrix has {M.shape[1]} columns, vector has {x.shape[0]} entries")
    return M @ x


def spgemm(A, B):
    if A.shape[1] != B.shape[0]:
        raise DimensionMismatch(f"cannot multiply {A.shape} by {B.shape}")
    return canonicalize(sp.csr_matrix(A) @ sp.csr_matrix(B))


def transpose(M):
    """Materialized transpose in canonical CSR."""
    return canonicalize(sp.csr_matrix(M).T)


def galerkin_triple(P, K):
    """Coarse operator ``P^T K P``."""
    if K.shape[0] != K.shape[1]:
        raise DimensionMismatch("K must be square")
    if P.shape[0] != K.shape[0]:
        raise DimensionMismatch(f"P has {P.shape[0]} rows, K has {K.shape[0]}")
    return spgemm(transpose(P), spgemm(K, P))


def block_diag(blocks):
    return canonicalize(sp.block_diag(blocks, format="csr"))


def saddle_matrix(A, B):
    """Assemble ``[[A, B^T], [B, 0]]``."""
    if A.shape[0] != B.shape[1]:
        raise DimensionMismatch("B must have as many columns as A has rows")
    return canonicalize(sp.bmat([[A, B.T], [B, None]], format="csr"))


@dataclass
class LUFactors:
    lu: np.ndarray
    piv: np.ndarray

    @property
    def n(self):
        return self.lu.shape[0]


def dense_lu_factor(M):
    """LU factorization with partial pivoting.

    Raises
    ------
    SingularMatrix
        If a pivot column is exactly zero.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch("dense LU needs a square matrix")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=True)
    diag = np.abs(np.diag(lu))
    if M.shape[0] and (diag == 0.0).any():
        raise SingularMatrix(f"zero pivot in column {int(np.argmin(diag))}")
    return LUFactors(lu, piv)


def dense_lu_solve(F, b):
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != F.n:
        raise DimensionMismatch("right-hand side length does not match factorization")
    return sla.lu_solve((F.lu, F.piv), b, check_finite=False)


def inverse_diagonal(M):
    d = M.diagonal()
    if np.any(d == 0.0):
        raise ZeroDiagonal(f"zero diagonal entry at row {int(np.flatnonzero(d == 0.0)[0])}")
    return 1.0 / d


def power_rho_estimate(M, D_inv=None, iters=10, seed=DEFAULT_SEED):
    """Estimate the spectral radius of ``D^{-1} M`` by power iteration.

    For symmetric ``M`` with a positive diagonal, ``D^{-1} M`` is self-adjoint
    in the ``D`` inner product and the estimate is the largest Rayleigh quotient
    seen over the iterates, which never exceeds the true radius. Otherwise the
    last norm ratio is returned.
    """
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch("M must be square")
    if D_inv is None:
        D_inv = inverse_diagonal(M)
    D_inv = np.asarray(D_inv, dtype=np.float64)
    if not np.all(np.isfinite(D_inv)) or np.any(D_inv == 0.0):
        raise ZeroDiagonal("D_inv must be the reciprocal of a nonzero diagonal")
    n = M.shape[0]
    if n == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    d = 1.0 / D_inv
    symmetric = abs(M - M.T).max() <= 1e-12 * max(abs(M).max(), 1e-300) and np.all(d > 0)
    est = 0.0
    x /= np.linalg.norm(x)
    for _ in range(max(int(iters), 1)):
        Mx = M @ x
        y = D_inv * Mx
        if symmetric:
            est = max(est, float(x @ Mx) / float(x @ (d * x)))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return est
        if not symmetric:
            est = ny
        x = y / ny
    return float(est)


def read_matrix_market(path):
    return canonicalize(scipy.io.mmread(str(path)))


def write_matrix_market(path, M):
    """Write ``M`` as ``%%MatrixMarket matrix coordinate real general``."""
    M = sp.coo_matrix(M)
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        fh.write(f"{M.shape[0]} {M.shape[1]} {M.nnz}\n")
        for i, j, v in zip(M.row, M.col, M.data):
            fh.write(f"{i + 1} {j + 1} {v:.17g}\n")
