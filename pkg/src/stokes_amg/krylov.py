"""Restarted flexible GMRES with right preconditioning."""
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch

BREAKDOWN_TOL = 1e-30


@dataclass
class KrylovReport:
    iterations: int = 0
    history: list = field(default_factory=list)
    converged: bool = False
    final_residual: float = np.nan
    breakdown: bool = False


def _as_operator(K):
    if K is None:
        return lambda v: v
    if callable(K):
        return K
    return lambda v: K @ v


def relative_residual(K, x, b):
    """``||b - K x|| / ||b||``, or the absolute norm when ``b = 0``."""
    r = np.asarray(b, dtype=np.float64) - _as_operator(K)(x)
    nb = np.linalg.norm(b)
    nr = float(np.linalg.norm(r))
    return nr / nb if nb > 0 else nr


def fgmres(K, b, M=None, x0=None, restart=20, tol=1e-10, maxiter=200,
           flexible=True, check_residual=True):
    """Solve ``K x = b`` with restarted right-preconditioned FGMRES.

    Parameters
    ----------
    K : sparse matrix or callable
    b : ndarray
    M : callable, optional
        Preconditioner ``z = M(v)``; it may change between applications.
    restart : int
        Krylov subspace size per cycle.
    tol : float
        Stop when the true relative residual is at most ``tol``.
    maxiter : int
        Total iteration budget over all cycles.
    flexible : bool
        Store the preconditioned directions (FGMRES). With ``False`` the update
        is formed as ``M(V y)``, which is standard right-preconditioned GMRES
        and only valid for a fixed linear ``M``.
    check_residual : bool
        Compute the true residual at the end of each cycle. Turning this off
        saves one product with ``K`` when the routine is used as a fixed-step
        inner solver (``tol=0``).

    Returns
    -------
    x : ndarray
    report : KrylovReport
        ``history[k]`` is the relative residual after ``k`` iterations; the
        last entry of every cycle is the true residual.
    """
    Kop = _as_operator(K)
    Mop = _as_operator(M)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64, copy=True)
    if x.shape[0] != n:
        raise DimensionMismatch("initial guess and right-hand side differ in length")
    rep = KrylovReport()
    nb = np.linalg.norm(b)
    if nb == 0.0:
        nb = 1.0
    r = b - Kop(x) if x0 is not None else b.copy()
    beta = np.linalg.norm(r)
    rep.history.append(float(beta / nb))
    if beta / nb <= tol:
        rep.converged = True
        rep.final_residual = rep.history[0]
        return x, rep
    m = max(int(restart), 1)
    it = 0
    while it < maxiter:
        V = np.zeros((m + 1, n))
        Z = np.zeros((m, n)) if flexible else None
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k = 0
        broke = False
        while k < m and it < maxiter:
            z = Mop(V[k])
            if flexible:
                Z[k] = z
            w = Kop(z)
            for j in range(k + 1):
                H[j, k] = w @ V[j]
                w -= H[j, k] * V[j]
            H[k + 1, k] = np.linalg.norm(w)
            for j in range(k):
                t = cs[j] * H[j, k] + sn[j] * H[j + 1, k]
                H[j + 1, k] = -sn[j] * H[j, k] + cs[j] * H[j + 1, k]
                H[j, k] = t
            hk, hk1 = H[k, k], H[k + 1, k]
            denom = np.hypot(hk, hk1)
            if denom == 0.0:
                cs[k], sn[k] = 1.0, 0.0
            else:
                cs[k], sn[k] = hk / denom, hk1 / denom
            broke = hk1 < BREAKDOWN_TOL
            H[k, k] = cs[k] * hk + sn[k] * hk1
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            k += 1
            it += 1
            rep.history.append(float(abs(g[k]) / nb))
            if broke:
                break
            V[k] = w / hk1
            if rep.history[-1] <= tol:
                break
        y = _back_substitute(H[:k, :k], g[:k])
        if flexible:
            x += Z[:k].T @ y
        else:
            x += Mop(V[:k].T @ y)
        if broke:
            rep.breakdown = True
        if not check_residual:
            break
        r = b - Kop(x)
        beta = np.linalg.norm(r)
        rep.history[-1] = float(beta / nb)
        if rep.history[-1] <= tol:
            rep.converged = True
            break
        if broke or beta == 0.0:
            break
    rep.iterations = len(rep.history) - 1
    rep.final_residual = rep.history[-1]
    return x, rep


def _back_substitute(R, g):
    k = g.shape[0]
    y = np.zeros(k)
    for i in range(k - 1, -1, -1):
        s = g[i] - R[i, i + 1:] @ y[i + 1:]
        y[i] = s / R[i, i] if R[i, i] != 0.0 else 0.0
    return y
