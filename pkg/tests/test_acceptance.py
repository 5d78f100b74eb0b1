"""End-to-end acceptance criteria 1-11.

Each test prints one ``criterion N: PASS|FAIL | details`` line; the lines are
repeated in the terminal summary. Run alone with
``pytest tests/test_acceptance.py -v``.
"""
import time
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from stokes_amg import vanka as vk
from stokes_amg.amg import AMGOptions, hierarchy_for
from stokes_amg.config import SolverConfig
from stokes_amg.experiments import mesh_path
from stokes_amg.fem import (assemble_scott_vogelius, assemble_taylor_hood, iso_companion)
from stokes_amg.mesh import (BackwardFacingStep, barycentric_refine, channel, quadrisect,
                             read_mesh, structured_tri_mesh)
from stokes_amg.mms import mms_study
from stokes_amg.precond import build_preconditioner, parameter_scan, solve

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

TH_LEVELS = (8, 16, 32)
SV_LEVELS = (4, 8, 16)
TH_SOLVERS = {
    "DCall": {"variant": "DCall", "eta": 0.75},
    "DCHO": {"variant": "DCHO", "eta": 0.86},
    "HOAMG": {"variant": "HOAMG"},
    "DCLO": {"variant": "DCLO", "eta": 0.75},
    "Uzawa": {"variant": "Uzawa"},
}
SV_SOLVERS = {
    "DCall": {"variant": "DCall", "omega0": 0.78, "eta_p": 2.68, "eta_u": 1.0},
    "HOAMG": {"variant": "HOAMG", "allow_sv_hoamg": True},
    "Uzawa": {"variant": "Uzawa"},
}


def bfs(k):
    return structured_tri_mesh(6 * k, 2 * k, BackwardFacingStep())


def th_system(k):
    return assemble_taylor_hood(bfs(k), "BFS2D")


def sv_system(k):
    return assemble_scott_vogelius(barycentric_refine(bfs(k))[0], "BFS2D")


def run_batch(make, levels, solvers):
    """``{level: {"n": dofs, name: (iterations, converged, setup)}}`` plus wall time."""
    t0 = time.perf_counter()
    out = {}
    for k in levels:
        sys0 = make(k)
        sys1 = None
        row = {"n": sys0.n}
        for name, d in solvers.items():
            cfg = SolverConfig.from_dict(d)
            setup = build_preconditioner(sys0, cfg, sys1=sys1)
            sys1 = setup.sys1 or sys1
            rep = solve(sys0, cfg, setup=setup).report
            row[name] = (rep.iterations, bool(rep.converged), setup)
        out[k] = row
    return out, time.perf_counter() - t0


@pytest.fixture(scope="module")
def th_batch():
    return run_batch(th_system, TH_LEVELS, TH_SOLVERS)


@pytest.fixture(scope="module")
def sv_batch():
    return run_batch(sv_system, SV_LEVELS, SV_SOLVERS)


def its(batch, name):
    return [batch[k][name][0] for k in batch]


def conv(batch, name):
    return all(batch[k][name][1] for k in batch)


# -- small test systems --------------------------------------------------------

def small_systems():
    """Saddle systems of at most a few hundred DoFs for the dense checks."""
    th = assemble_taylor_hood(structured_tri_mesh(4, 2, channel(2.0, 1.0)), "Channel2D")
    sv = assemble_scott_vogelius(barycentric_refine(structured_tri_mesh(3, 1, channel(3.0, 1.0)))[0],
                                 "Channel2D")
    iso_th = assemble_taylor_hood(structured_tri_mesh(6, 3, channel(2.0, 1.0)), "Channel2D")
    return {"TH": th, "SV": sv, "ISO": iso_companion(iso_th)}


def small_hierarchies():
    out = {}
    for name, s in small_systems().items():
        aux = s.extras["Ap_dg"] if s.disc == "SV" else None
        seeds = s.extras.get("pressure_cells") if s.disc == "SV" else None
        out[name] = (s, hierarchy_for(s, AMGOptions(coarse_size=20, max_ratio_drift=None),
                                      pressure_aux=aux, fine_seeds=seeds))
    return out


# -- criteria ------------------------------------------------------------------

def test_c1_block_lu_matches_dense(criterion):
    rng = np.random.default_rng(1234)
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for ns in (1, 3):
        for _ in range(150):
            mx, my = rng.integers(3, 12, size=2)
            blocks = []
            for m in (mx, my):
                Q = rng.standard_normal((m, m))
                blocks.append(Q @ Q.T + m * np.eye(m))
            B = rng.standard_normal((ns, mx + my))
            A = sp.block_diag(blocks).toarray()
            Kd = np.block([[A, B.T], [B, np.zeros((ns, ns))]])
            K = sp.csr_matrix(Kd)
            F = vk.factor_patches(K, vk.build_patches(K, (mx, my, ns), seeds=np.arange(ns)[None, :]))
            r = rng.standard_normal(Kd.shape[0])
            ref = np.linalg.solve(Kd, r)
            worst = max(worst, np.linalg.norm(vk.apply_vanka(F, r) - ref) / np.linalg.norm(ref))
            count += 1
    dt = time.perf_counter() - t0
    criterion(1, count >= 200 and worst <= 1e-10 and dt < 10,
              f"{count} patches, max rel error {worst:.2e}, {dt:.2f}s")


def test_c2_galerkin_fidelity(criterion):
    worst, checked = 0.0, []
    for name, (s, H) in small_hierarchies().items():
        assert s.n <= 400, (name, s.n)
        for f, c in zip(H.levels, H.levels[1:]):
            Pd = f.P.toarray()
            ref = Pd.T @ f.K.toarray() @ Pd
            worst = max(worst, np.linalg.norm(c.K.toarray() - ref) / np.linalg.norm(ref))
        checked.append(f"{name} n={s.n} levels={H.n_levels}")
    ok = worst <= 1e-12 and all(H.n_levels >= 2 for _, H in small_hierarchies().values())
    criterion(2, ok, f"max Frobenius-relative error {worst:.2e}; " + ", ".join(checked))


def test_c3_partition_of_unity(criterion):
    bad, levels = 0, 0
    for name, (s, H) in small_hierarchies().items():
        for lev in H.levels:
            if lev.vanka is None:
                continue
            P = lev.vanka.patches
            counts = np.zeros(P.n, dtype=np.int64)
            for p in P:
                counts[np.concatenate([p.velocity, p.pressure])] += 1
            total = [Fraction(0)] * P.n
            for p in P:
                for d in np.concatenate([p.velocity, p.pressure]):
                    total[d] += Fraction(1, int(counts[d]))
            bad += sum(t != 1 for t in total)
            bad += int(np.any(lev.vanka.weights[:P.n] != 1.0 / counts))
            levels += 1
    criterion(3, bad == 0 and levels > 0, f"{levels} relaxed levels, {bad} DoFs off unity")


def test_c4_discretization_gate(criterion):
    t0 = time.perf_counter()
    th = mms_study("TH", (8, 16, 32))
    sv = mms_study("SV", (8, 16, 32))
    dt = time.perf_counter() - t0
    vo = [r.velocity_order for r in th[1:]]
    po = [r.pressure_order for r in th[1:]]
    div = max(r.divergence for r in sv)
    ok = min(vo) >= 2.9 and min(po) >= 1.9 and div <= 1e-8 and dt < 120
    criterion(4, ok, f"TH velocity orders {np.round(vo, 3).tolist()}, pressure orders "
                     f"{np.round(po, 3).tolist()}; SV max elementwise divergence {div:.1e}; {dt:.0f}s")


def test_c5_th_robustness(th_batch, criterion):
    batch, dt = th_batch
    parts, ok = [], True
    for name in ("DCall", "DCHO", "HOAMG"):
        it = its(batch, name)
        good = conv(batch, name) and max(it) - min(it) <= 3
        ok &= good
        parts.append(f"{name} {it}")
    closer = all(batch[k]["DCHO"][0] <= batch[k]["HOAMG"][0] + 1 for k in batch)
    big = batch[TH_LEVELS[-1]]["n"]
    ok &= closer and big >= 100_000 and dt < 600
    criterion(5, ok, "; ".join(parts) + f"; DC-HO <= HO-AMG+1: {closer}; largest n={big}; {dt:.0f}s")


def test_c6_dclo_degradation(th_batch, criterion):
    batch, _ = th_batch
    lo, al = its(batch, "DCLO"), its(batch, "DCall")
    criterion(6, conv(batch, "DCLO") and all(a > b for a, b in zip(lo, al)),
              f"DC-LO {lo} vs DC-all {al}")


def test_c7_sv_robustness(sv_batch, criterion):
    batch, dt = sv_batch
    dc = its(batch, "DCall")
    growth = np.diff(dc).tolist()
    ok = conv(batch, "DCall") and all(12 <= i <= 45 for i in dc) and max(growth) <= 2
    ho = [batch[k]["HOAMG"] for k in batch]
    poor = all((not c) or i >= 2 * d for (i, c, _), d in zip(ho, dc))
    ho_text = [f"{i}{'' if c else ' (not converged)'}" for i, c, _ in ho]
    criterion(7, ok and poor, f"DC-all {dc} (growth {growth}); HO-AMG {ho_text}; {dt:.0f}s")


def test_c8_uzawa_gap(th_batch, sv_batch, criterion):
    res, ok = [], True
    for label, (batch, _), factor in (("SV", sv_batch, 3), ("TH", th_batch, 2)):
        uz, dc = its(batch, "Uzawa"), its(batch, "DCall")
        slack = [1] + [0] * (len(uz) - 1)
        ok &= conv(batch, "Uzawa") and all(u + s >= factor * d for u, d, s in zip(uz, dc, slack))
        res.append(f"{label} Uzawa {uz} vs DC-all {dc} (ratio {np.round(np.divide(uz, dc), 2).tolist()})")
    criterion(8, ok, "; ".join(res))


def test_c9_scan_shape(criterion):
    t0 = time.perf_counter()
    sv0 = sv_system(4)
    sv_grid = {"omega0": [0.3, 0.5, 0.7, 0.78, 0.9, 1.1], "eta_p": [1.0, 1.8, 2.68, 4.0, 5.0, 7.0]}
    sv = parameter_scan(sv0, SolverConfig(variant="DCall", eta_u=1.0), sv_grid)
    best = min(r["iterations"] for r in sv.rows)
    plateau = [(r["omega0"], r["eta_p"]) for r in sv.rows if r["iterations"] <= best + 2]
    inside = all(0.5 <= w <= 0.9 and 1.8 <= e <= 5.0 for w, e in plateau)

    th0 = th_system(8)
    etas = np.round(np.arange(0.40, 1.601, 0.05), 2).tolist()
    th = parameter_scan(th0, SolverConfig(variant="DCall"), {"eta": etas})
    it = {r["eta"]: r["iterations"] for r in th.rows}
    best_th = min(it.values())
    flat = [e for e in etas if it[e] == best_th]
    lo, hi = min(flat), max(flat)
    pairs = [(it[round(lo - d, 2)], it[round(hi + d, 2)]) for d in (0.2, 0.3, 0.4)]
    asym = all(a > b for a, b in pairs)
    dt = time.perf_counter() - t0
    criterion(9, inside and asym and dt < 1200,
              f"SV plateau (<= best {best} + 2) {plateau}; optimum "
              f"({sv.optimum['omega0']}, {sv.optimum['eta_p']}); TH plateau [{lo}, {hi}] at "
              f"{best_th} its, below/above at 0.2/0.3/0.4: {pairs}; TH optimum {th.optimum['eta']}; {dt:.0f}s")


def iso_drifts(sys0):
    H = hierarchy_for(iso_companion(sys0), AMGOptions(max_ratio_drift=None), smoothers=False)
    return [l["ratio_drift"] for l in H.stats()["levels"]]


def test_c10_coarsening_ratio(criterion):
    cases = {}
    for k in TH_LEVELS:
        cases[f"TH-BFS k={k}"] = th_system(k)
    for k in SV_LEVELS:
        cases[f"SV-BFS k={k}"] = sv_system(k)
    cases["TH-BFS 64x64"] = assemble_taylor_hood(structured_tri_mesh(64, 64, BackwardFacingStep()), "BFS2D")
    cases["TH-square 64x64"] = assemble_taylor_hood(structured_tri_mesh(64, 64, channel(1.0, 1.0)), "Channel2D")
    for name, refs in (("cylinder_channel", (0, 1, 2)), ("sample20", (2, 3))):
        m = read_mesh(mesh_path(f"bundled:{name}"))
        for r in range(max(refs) + 1):
            if r in refs:
                cases[f"{name} r={r}"] = assemble_taylor_hood(m, "CylinderFile")
            m = quadrisect(m)[0]
    drifts = {name: iso_drifts(s) for name, s in cases.items()}
    multi = all(len(d) >= 2 for n, d in drifts.items() if "sample20 r=2" not in n)
    lo = min(min(d) for d in drifts.values())
    hi = max(max(d) for d in drifts.values())
    worst = min(drifts, key=lambda n: min(drifts[n]))
    criterion(10, 0.5 <= lo and hi <= 2.0 and multi,
              f"{len(cases)} ISO hierarchies, drift range [{lo:.3f}, {hi:.3f}], lowest in {worst}")


def test_c11_mass_projection(sv_batch, criterion):
    batch, _ = sv_batch
    per_level = []
    for k in batch:
        proj = batch[k]["DCall"][2].precond.transfer.pressure_restrict
        assert proj.hierarchy.n_levels >= 2
        per_level.append((min(proj.iterations), max(proj.iterations), len(proj.iterations)))
    peaks = [p[1] for p in per_level]
    ok = all(b <= a for a, b in zip(peaks, peaks[1:]))
    criterion(11, ok, "inner iterations (min, max, solves) per level " + str(per_level)
                      + "; every solve reached 1e-12")
