"""Preconditioners for the Stokes saddle-point system.

* defect correction (``DCall``, ``DCLO``, ``DCHO``): relax on the high-order
  system, correct with one monolithic V-cycle on the co-located ISO system;
* ``HOAMG``: monolithic V-cycle built directly on the high-order system;
* ``Uzawa``: inexact block-triangular velocity/pressure update.
"""
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import vanka as vk
from .amg import (build_scalar_hierarchy, hierarchy_for, mass_options, monolithic_vcycle,
                  scalar_vcycle)
from .config import SolverConfig
from .errors import ConfigError, UnsupportedDiscretization
from .fem import iso_companion
from .krylov import fgmres
from .sparse import canonicalize
from .transfer import apply_eta_weighting, build_sv_transfer, build_th_transfer


class DCPreconditioner:
    """Two-level defect correction between ``K0`` and its ISO companion ``K1``."""

    def __init__(self, sys0, sys1, transfer, H1, F0, cfg, fine_mode, fine_omega):
        self.sys0, self.sys1 = sys0, sys1
        self.transfer = transfer
        self.H1 = H1
        self.F0 = F0
        self.cfg = cfg
        self.fine_mode, self.fine_omega = fine_mode, fine_omega
        self.K0 = sys0.K
        self.K1 = sys1.K
        self.relax_fine = cfg.variant != "DCLO"
        self.skip = (0,) if cfg.variant == "DCHO" else ()
        self.fine_relax_count = 0
        self.applications = 0

    @property
    def n(self):
        return self.K0.shape[0]

    def reset_counters(self):
        self.fine_relax_count = 0
        self.applications = 0
        self.H1.reset_counters()

    def _relax(self, x, r, sweeps):
        if not self.relax_fine or sweeps == 0:
            return x
        self.fine_relax_count += 1
        return vk.relax(self.K0, self.F0, x, r, self.fine_mode, sweeps, self.fine_omega)

    def coarse_correction(self, r0):
        """``P0 (gamma V-cycles on K1) eta R0 r0``."""
        cfg = self.cfg
        r1 = self.transfer.restrict(apply_eta_weighting(r0, cfg.eta_u, cfg.eta_p, self.sys0.sizes))
        y = monolithic_vcycle(self.H1, r1, cfg.nu1, cfg.nu2, self.skip)
        for _ in range(cfg.gamma - 1):
            y = y + monolithic_vcycle(self.H1, r1 - self.K1 @ y, cfg.nu1, cfg.nu2, self.skip)
        return self.transfer.prolong(y)

    def __call__(self, r):
        self.applications += 1
        cfg = self.cfg
        x = self._relax(np.zeros_like(r), r, cfg.nu1)
        res = r - self.K0 @ x if np.any(x) else r
        x = x + self.coarse_correction(res)
        return self._relax(x, r, cfg.nu2)


class HOAMGPreconditioner:
    """One monolithic V-cycle on a hierarchy built from the high-order system."""

    def __init__(self, H, cfg):
        self.H = H
        self.cfg = cfg
        self.applications = 0

    def reset_counters(self):
        self.applications = 0
        self.H.reset_counters()

    def __call__(self, r):
        self.applications += 1
        if not np.any(r):
            return np.zeros_like(r)
        return monolithic_vcycle(self.H, r, self.cfg.nu1, self.cfg.nu2)


def block_mass_inverse(Mp, cells):
    """Exact inverse of a block-diagonal (per-element) pressure mass matrix."""
    cells = np.asarray(cells)
    T, k = cells.shape
    rows = np.repeat(cells, k, axis=1).ravel()
    cols = np.tile(cells, (1, k)).ravel()
    blocks = np.asarray(Mp.tocsr()[rows, cols]).reshape(T, k, k)
    inv = np.linalg.inv(blocks)
    return canonicalize(sp.csr_matrix((inv.ravel(), (rows, cols)), shape=Mp.shape))


class UzawaPreconditioner:
    """``du = QA^{-1} r_u``, ``dp = QB^{-1} (B du - r_p)``."""

    def __init__(self, sys, cfg, QA=None, QB=None):
        self.sys = sys
        self.cfg = cfg
        self.B = sys.B
        self.nx, self.n_u = sys.nx, sys.n_u
        opts = cfg.amg_options()
        self.hierarchies = {}
        if QA is None:
            hx = build_scalar_hierarchy(sys.velocity_block(0), opts=opts)
            hy = build_scalar_hierarchy(sys.velocity_block(1), opts=opts)
            QA = lambda r: np.concatenate([scalar_vcycle(hx, r[:self.nx]),
                                           scalar_vcycle(hy, r[self.nx:])])
            self.hierarchies.update(x=hx, y=hy)
        if QB is None:
            if sys.disc == "SV":
                self.Mp_inv = block_mass_inverse(sys.Mp, sys.extras["pressure_cells"])
                QB = lambda r: self.Mp_inv @ r
            else:
                hp = build_scalar_hierarchy(sys.Mp, opts=mass_options())
                self.hierarchies["p"] = hp
                QB = lambda r: scalar_vcycle(hp, r)
        self.QA, self.QB = QA, QB
        self.applications = 0

    def reset_counters(self):
        self.applications = 0

    def __call__(self, r):
        self.applications += 1
        ru, rp = r[:self.n_u], r[self.n_u:]
        du = self.QA(ru)
        dp = self.QB(self.B @ du - rp)
        return np.concatenate([du, dp])


@dataclass
class Setup:
    precond: object
    sys1: object = None
    setup_time: float = 0.0
    stats: dict = field(default_factory=dict)


def _fine_mode(cfg, disc):
    mode = cfg.fine_relax.get(disc, "krylov")
    return (vk.STATIONARY, cfg.omega0) if mode == "stationary" else (vk.KRYLOV, 1.0)


def build_preconditioner(sys0, cfg, sys1=None, transfer=None, H1=None, F0=None):
    """Set up the preconditioner selected by ``cfg.variant``.

    ``sys1``, ``transfer``, ``H1`` and ``F0`` (the ISO companion, the transfer
    pair, its hierarchy and the fine Vanka factors) may be passed in to share
    them between runs; none of them depends on the weights, ``omega0`` or the
    DC variant, only on the AMG options.
    """
    cfg.validate()
    t0 = time.perf_counter()
    opts = cfg.amg_options()
    enclosed = sys0.enclosed
    if cfg.variant == "Uzawa":
        P = UzawaPreconditioner(sys0, cfg)
        stats = {}
    elif cfg.variant == "HOAMG":
        if sys0.disc == "SV" and not cfg.allow_sv_hoamg:
            raise UnsupportedDiscretization(
                "HO-AMG on Scott-Vogelius is refused; set allow_sv_hoamg to run it anyway")
        aux = sys0.extras["Ap_dg"] if sys0.disc == "SV" else sys0.Ap
        seeds = sys0.extras.get("pressure_cells") if sys0.disc == "SV" else None
        # the ratio-drift guard protects the ISO correction hierarchy; applied
        # here it would truncate SV hierarchies to a single direct solve
        H = hierarchy_for(sys0, replace(opts, max_ratio_drift=None), pressure_aux=aux,
                          fine_seeds=seeds, pressure_shift=enclosed)
        P = HOAMGPreconditioner(H, cfg)
        stats = H.stats()
    elif cfg.variant in ("DCall", "DCLO", "DCHO"):
        if sys1 is None:
            sys1 = iso_companion(sys0)
        if transfer is None:
            if sys0.disc == "SV":
                transfer = build_sv_transfer(sys0, sys1)
            elif sys0.disc == "TH":
                transfer = build_th_transfer(sys0, sys1)
            else:
                raise UnsupportedDiscretization(f"defect correction from {sys0.disc!r}")
        if H1 is None:
            H1 = hierarchy_for(sys1, opts, pressure_shift=enclosed)
        mode, omega = _fine_mode(cfg, sys0.disc)
        if cfg.variant == "DCLO":
            F0 = None
        elif F0 is None:
            seeds = sys0.extras.get("pressure_cells") if sys0.disc == "SV" else None
            F0 = vk.factor_patches(sys0.K, vk.build_patches(sys0.K, sys0.sizes, seeds,
                                                            sys0.extras.get("B_pattern")))
        P = DCPreconditioner(sys0, sys1, transfer, H1, F0, cfg, mode, omega)
        stats = H1.stats()
        if F0 is not None:
            stats["fine_patches"] = dict(F0.stats)
    else:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    return Setup(P, sys1, time.perf_counter() - t0, stats)


def _project_pressure(v, n_u):
    v = v.copy()
    v[n_u:] -= v[n_u:].mean()
    return v


@dataclass
class SolveResult:
    x: np.ndarray
    report: object
    setup_time: float
    solve_time: float
    setup: Setup


def solve(sys0, cfg, setup=None, b=None, **kw):
    """Run preconditioned FGMRES from a zero initial guess."""
    setup = setup or build_preconditioner(sys0, cfg, **kw)
    K = sys0.K
    b = sys0.rhs if b is None else b
    M = setup.precond
    if sys0.enclosed:
        n_u = sys0.n_u
        b = _project_pressure(b, n_u)
        M = lambda r, P=setup.precond: _project_pressure(P(_project_pressure(r, n_u)), n_u)
    t0 = time.perf_counter()
    x, rep = fgmres(K, b, M=M, restart=cfg.restart, tol=cfg.tol, maxiter=cfg.maxiter)
    return SolveResult(x, rep, setup.setup_time, time.perf_counter() - t0, setup)


def convergence_factor(history, window=10):
    """Geometric mean of the per-iteration reduction over the last ``window``."""
    h = np.asarray(history, dtype=np.float64)
    if h.size < 2:
        return 0.0
    w = min(window, h.size - 1)
    if h[-w - 1] <= 0:
        return 0.0
    return float((h[-1] / h[-w - 1]) ** (1.0 / w))


@dataclass
class ScanResult:
    params: list
    rows: list
    optimum: dict


def select_optimum(rows, params):
    best = min(r["iterations"] for r in rows)
    tied = [r for r in rows if r["iterations"] == best]

    def key(r):
        ones = sum(1 for p in params if r[p] == 1.0)
        return (-ones, r["factor"])

    return min(tied, key=key)


def parameter_scan(sys0, base_cfg, grid, tol=1e-8, shared=None):
    """Iteration counts over a parameter grid.

    Parameters
    ----------
    grid : dict
        Maps a :class:`SolverConfig` field (``eta`` sets both weights) to the
        list of values to scan; the full tensor grid is visited in order.
    shared : tuple, optional
        ``(sys1, transfer, H1[, F0])`` from an earlier setup. They are reused
        across grid points unless the grid scans an AMG option.

    Returns
    -------
    ScanResult
        One row per grid point; non-convergent points count ``maxiter``.
    """
    import itertools
    params = list(grid)
    sys1 = transfer = H1 = F0 = None
    if shared is not None:
        sys1, transfer, H1 = shared[:3]
        F0 = shared[3] if len(shared) > 3 else None
    amg_keys = {"soc", "theta", "soc_k", "coarse_size", "max_ratio_drift", "smooth_pressure",
                "aggregation_order"}
    reuse = not (amg_keys & set(params))
    rows = []
    for values in itertools.product(*(grid[p] for p in params)):
        d = base_cfg.to_dict()
        d.update(dict(zip(params, values)))
        if "eta" in d:
            d["eta_u"] = d["eta_p"] = d.pop("eta")
        d["tol"] = tol
        cfg = SolverConfig.from_dict(d)
        if reuse:
            setup = build_preconditioner(sys0, cfg, sys1=sys1, transfer=transfer, H1=H1, F0=F0)
        else:
            setup = build_preconditioner(sys0, cfg, sys1=sys1)
        if reuse and cfg.variant in ("DCall", "DCLO", "DCHO"):
            sys1, transfer, H1 = setup.sys1, setup.precond.transfer, setup.precond.H1
            F0 = setup.precond.F0 if setup.precond.F0 is not None else F0
        res = solve(sys0, cfg, setup=setup)
        rep = res.report
        row = dict(zip(params, (float(v) for v in values)))
        row.update(iterations=rep.iterations if rep.converged else cfg.maxiter,
                   converged=bool(rep.converged), factor=convergence_factor(rep.history))
        rows.append(row)
    return ScanResult(params, rows, select_optimum(rows, params))
