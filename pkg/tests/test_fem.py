import numpy as np
import pytest
import scipy.sparse as sp

from stokes_amg.errors import CompatibilityError, StabilityError
from stokes_amg.fem import (P1DiscSpace, P1Space, P2Space, StokesProblem, assemble_iso,
                            assemble_scott_vogelius, assemble_taylor_hood, coupling_pattern,
                            divergence_matrix, geometric_interpolation, iso_companion, mass_matrix,
                            parabolic_inflow, penalized_broken_laplacian, stiffness_matrix)
from stokes_amg.mesh import BackwardFacingStep, barycentric_refine, quadrisect, structured_tri_mesh
from stokes_amg.mms import direct_solve, linear_problem, mms_errors


def zero_problem():
    return StokesProblem("Custom", lambda xy: np.zeros((len(xy), 2)), None)


def test_th_block_sizes():
    m = structured_tri_mesh(2, 2)
    V, Q = P2Space(m), P1Space(m)
    assert divergence_matrix(V, Q).shape == (9, 50)
    s = assemble_taylor_hood(m, zero_problem())
    # all-no-slip square: the 16 boundary nodes of the 5x5 P2 grid are constrained
    assert (s.nx, s.ny, s.n_p) == (25 - 16, 25 - 16, 9)


def test_operator_invariants(th_bfs4):
    m = th_bfs4.mesh
    V, Q = P2Space(m), P1Space(m)
    A = stiffness_matrix(V)
    assert abs(A - A.T).max() < 1e-13
    assert np.linalg.eigvalsh(A.toarray()).min() > -1e-10
    B = divergence_matrix(V, Q)
    ones = np.ones(2 * V.n_dofs)
    assert np.abs(B @ ones).max() < 1e-13
    assert np.abs(stiffness_matrix(Q) @ np.ones(Q.n_dofs)).max() < 1e-13
    # no x-y coupling in the reduced velocity block
    nx = th_bfs4.nx
    assert th_bfs4.A[:nx, nx:].nnz == 0


def test_sv_counts_and_mass_block():
    b = barycentric_refine(structured_tri_mesh(2, 2))[0]
    s = assemble_scott_vogelius(b, zero_problem())
    assert P2Space(b).n_dofs == 57 and s.n_p == 72
    a = b.areas()[0]
    blk = s.Mp[:3, :3].toarray()
    np.testing.assert_allclose(blk, a / 12 * np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]), rtol=1e-13)
    assert s.Mp[:3, 3:].nnz == 0


def test_sv_needs_barycentric_mesh():
    with pytest.raises(StabilityError):
        assemble_scott_vogelius(structured_tri_mesh(2, 2), zero_problem())


def test_iso_matches_th_sizes():
    m = structured_tri_mesh(2, 2)
    f, rmap = quadrisect(m)
    s = assemble_iso(m, f, rmap, zero_problem())
    t = assemble_taylor_hood(m, zero_problem())
    assert s.sizes == t.sizes
    assert P1Space(f).n_dofs == 25
    np.testing.assert_allclose(s.velocity_coords, t.velocity_coords, atol=1e-15)
    E = geometric_interpolation(rmap).toarray()
    coarse = rmap.kind == 0
    assert np.all((E[coarse] == 1).sum(axis=1) == 1)
    assert np.all(np.sort(E[~coarse], axis=1)[:, -2:] == 0.5)
    assert np.abs(s.B_full @ np.ones(s.B_full.shape[1])).max() < 1e-13


def test_inflow_profile():
    m = structured_tri_mesh(6, 4, BackwardFacingStep())
    g = parabolic_inflow(m)
    xy = np.array([[-1.0, 0.5], [-1.0, 0.0], [-1.0, 1.0], [-1.0, 0.25]])
    np.testing.assert_allclose(g(xy)[:, 0], [1.0, 0.0, 0.0, 0.75])
    assert np.all(g(xy)[:, 1] == 0)
    s = assemble_taylor_hood(m, "BFS2D")
    assert s.dirichlet.values[:, 0].max() == pytest.approx(1.0)


def test_null_problem_gives_zero_rhs():
    s = assemble_taylor_hood(structured_tri_mesh(3, 3), zero_problem())
    assert not np.any(s.rhs)
    np.testing.assert_array_equal(direct_solve(s), 0.0)


def test_incompatible_enclosed_flow():
    bad = StokesProblem("Custom", lambda xy: np.tile([1.0, 0.0], (len(xy), 1)) * (xy[:, :1] < 0.5), None)
    with pytest.raises(CompatibilityError):
        assemble_taylor_hood(structured_tri_mesh(4, 4), bad)


@pytest.mark.parametrize("disc", ["TH", "SV"])
def test_linear_velocity_patch_test(disc):
    r = mms_errors(disc, 3, linear_problem(), lambda xy: np.zeros(len(xy)), 0.0)
    assert r.velocity_error < 1e-12 and r.pressure_error < 1e-10


def test_coupling_pattern_covers_numeric_b(th_bfs4):
    s = th_bfs4
    P = s.extras["B_pattern"]
    assert P.shape == s.B.shape
    assert (abs(s.B) > 0).multiply(P).nnz == (abs(s.B) > 0).nnz
    assert P.nnz > s.B.nnz   # some couplings cancel exactly on structured meshes


def test_dg_auxiliary_kernel(sv_bfs2):
    A = sv_bfs2.extras["Ap_dg"]
    assert abs(A - A.T).max() < 1e-12
    assert np.abs(A @ np.ones(A.shape[0])).max() < 1e-12
    ev = np.linalg.eigvalsh(A.toarray())
    assert ev[0] > -1e-10 and ev[1] > 1e-8        # only the constant is annihilated


def test_mass_matrix_integrates_one():
    m = structured_tri_mesh(3, 2)
    for V in (P1Space(m), P2Space(m), P1DiscSpace(m)):
        assert mass_matrix(V).sum() == pytest.approx(m.total_area(), rel=1e-13)
