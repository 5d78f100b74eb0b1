import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from conftest import poisson_1d, poisson_2d
from stokes_amg.amg import (AMGOptions, aggregate, build_monolithic_hierarchy,
                            build_scalar_hierarchy, evolution_soc, hierarchy_for, monolithic_vcycle,
                            scalar_vcycle, smooth_prolongator, strength, symmetric_soc,
                            tentative_prolongator)
from stokes_amg.fem import iso_companion
from stokes_amg.mesh import BackwardFacingStep, structured_tri_mesh
from stokes_amg.sparse import power_rho_estimate, inverse_diagonal


def edges(g):
    K = sp.coo_matrix(g.keep())
    return set(zip(K.row.tolist(), K.col.tolist()))


def anisotropic(n, eps=1e-3):
    T = poisson_1d(n)
    I = sp.identity(n)
    return sp.csr_matrix(sp.kron(I, T) + eps * sp.kron(T, I))   # index = y*n + x


# -- strength of connection ---------------------------------------------------

@pytest.mark.parametrize("form", ["distance", "ratio"])
def test_evolution_diagonal_has_no_edges(form):
    assert not edges(evolution_soc(sp.diags([1.0, 2.0, 3.0, 4.0]).tocsr(), form=form))


def test_evolution_ratio_1d_poisson_matches_dense_oracle():
    n = 12
    A = poisson_1d(n)
    Ad = A.toarray()
    Dinv = 1.0 / np.diag(Ad)
    rho = power_rho_estimate(A, Dinv, iters=10)
    Z = np.linalg.matrix_power(np.eye(n) - 4.0 / (3.0 * rho) * Dinv[:, None] * Ad, 2)
    strong = set()
    for j in range(n):
        nb = [i for i in (j - 1, j + 1) if 0 <= i < n]
        s = {i: abs(Z[i, j]) / abs(Z[j, j]) for i in nb}
        strong |= {(i, j) for i in nb if s[i] >= 0.5 * max(s.values())}
    strong |= {(j, i) for i, j in strong}
    assert edges(evolution_soc(A, 0.5, 2, form="ratio")) == strong
    for i in range(1, n - 1):
        assert (i, i - 1) in strong and (i, i + 1) in strong


def test_evolution_distance_1d_poisson_keeps_neighbours():
    A = poisson_1d(12)
    e = edges(evolution_soc(A, 2.0, 4))
    assert all((i, i + 1) in e for i in range(11))


@pytest.mark.parametrize("form", ["distance", "ratio"])
def test_evolution_anisotropic_keeps_only_x(form):
    n = 8
    e = edges(evolution_soc(anisotropic(n), None, 2, form=form))
    assert e
    assert all(i // n == j // n for i, j in e)


def test_symmetric_soc_thresholds():
    A = poisson_1d(6)
    assert len(edges(symmetric_soc(A, 0.0))) == 10
    assert len(edges(symmetric_soc(A, 0.25))) == 10
    assert not edges(symmetric_soc(A, 0.9))
    e = edges(symmetric_soc(anisotropic(6), 0.25))
    assert all(i // 6 == j // 6 for i, j in e)


# -- aggregation --------------------------------------------------------------

def test_aggregate_chain_of_nine():
    g = symmetric_soc(poisson_1d(9), 0.25)
    agg = aggregate(g)
    assert agg.count == 3
    np.testing.assert_array_equal(agg.labels, [0, 0, 0, 1, 1, 1, 2, 2, 2])
    # index order seeds at node 0 and absorbs node 8 in the second pass
    np.testing.assert_array_equal(aggregate(g, "index").labels, [0, 0, 1, 1, 1, 2, 2, 2, 2])


def test_aggregate_disconnected_gives_singletons():
    agg = aggregate(symmetric_soc(sp.identity(7, format="csr"), 0.25))
    assert agg.count == 7
    np.testing.assert_array_equal(np.sort(agg.labels), np.arange(7))


@pytest.mark.parametrize("n", [32, 64])
def test_poisson_coarsening_ratio(n):
    A = poisson_2d(n)
    agg = aggregate(strength(A, AMGOptions()))
    assert 6.0 <= A.shape[0] / agg.count <= 12.0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_aggregates_partition_random_graphs(n, seed):
    r = np.random.default_rng(seed)
    M = sp.random(n, n, density=0.2, random_state=r, format="csr")
    A = sp.csr_matrix(abs(M) + abs(M).T) + sp.identity(n) * n
    for order in ("degree", "index"):
        agg = aggregate(symmetric_soc(A, 0.1), order)
        assert agg.labels.min() == 0 and agg.labels.max() == agg.count - 1
        assert agg.sizes().sum() == n and np.all(agg.sizes() > 0)


# -- prolongators -------------------------------------------------------------

def test_tentative_prolongator_single_aggregate():
    agg = aggregate(symmetric_soc(sp.csr_matrix(np.ones((4, 4)) + 3 * np.eye(4)), 0.1))
    T, _ = tentative_prolongator(agg)
    assert T.shape == (4, 1)
    np.testing.assert_allclose(T.toarray().ravel(), 0.5)


def test_tentative_prolongator_orthonormal():
    A = poisson_2d(10)
    T, _ = tentative_prolongator(aggregate(strength(A, AMGOptions())))
    np.testing.assert_allclose((T.T @ T).toarray(), np.eye(T.shape[1]), atol=1e-14)
    np.testing.assert_allclose(T @ (T.T @ np.ones(A.shape[0])), 1.0, atol=1e-14)


def test_smoothed_prolongator_on_diagonal_matrix():
    A = sp.diags(np.arange(1.0, 7.0)).tocsr()
    T, _ = tentative_prolongator(aggregate(symmetric_soc(poisson_1d(6), 0.25)))
    P = smooth_prolongator(A, T)
    rho = power_rho_estimate(A, inverse_diagonal(A), iters=10)
    np.testing.assert_allclose(P.toarray(), (1 - 4.0 / 3.0 / rho) * T.toarray(), atol=1e-14)
    assert set(zip(*P.nonzero())) == set(zip(*T.nonzero()))


def test_smoothed_prolongator_pattern():
    A = poisson_2d(8)
    T, _ = tentative_prolongator(aggregate(strength(A, AMGOptions())))
    P = smooth_prolongator(A, T)
    allowed = set(zip(*(abs(A) @ abs(T) + abs(T)).nonzero()))
    assert set(zip(*P.nonzero())) <= allowed


def contraction(h, A, cycles=8, seed=3):
    b = np.random.default_rng(seed).standard_normal(A.shape[0])
    x = np.zeros_like(b)
    r = [np.linalg.norm(b)]
    for _ in range(cycles):
        x = scalar_vcycle(h, b, x)
        r.append(np.linalg.norm(b - A @ x))
    return max(a / b for a, b in zip(r[1:], r[:-1]))


def test_two_level_contraction():
    A = poisson_2d(32)
    h = build_scalar_hierarchy(A, coarse_size=20, max_levels=2)
    assert h.n_levels == 2
    assert contraction(h, A) <= 0.35


def test_vcycle_reduction():
    A = poisson_2d(32)
    h = build_scalar_hierarchy(A, coarse_size=20)
    assert h.n_levels >= 3
    assert contraction(h, A) <= 0.5


def test_vcycle_trivial_cases(rng):
    A = poisson_2d(6)
    h = build_scalar_hierarchy(A, coarse_size=100)
    assert h.n_levels == 1
    b = rng.standard_normal(36)
    assert np.linalg.norm(b - A @ scalar_vcycle(h, b)) <= 1e-10 * np.linalg.norm(b)
    np.testing.assert_array_equal(scalar_vcycle(build_scalar_hierarchy(poisson_2d(16)), np.zeros(256)), 0.0)


def test_scalar_galerkin_and_partition():
    A = poisson_2d(24)
    h = build_scalar_hierarchy(A, coarse_size=10)
    for f, c in zip(h.levels, h.levels[1:]):
        Pd = f.P.toarray()
        np.testing.assert_allclose(c.A.toarray(), Pd.T @ f.A.toarray() @ Pd, atol=1e-12)
        assert np.all(abs(f.P).sum(axis=0).A1 > 0)
        assert f.agg.sizes().sum() == f.A.shape[0]


# -- monolithic hierarchy -----------------------------------------------------

@pytest.fixture(scope="module")
def iso_bfs():
    from stokes_amg.fem import assemble_taylor_hood
    return iso_companion(assemble_taylor_hood(structured_tri_mesh(48, 16, BackwardFacingStep()), "BFS2D"))


def test_monolithic_structure(iso_bfs):
    H = hierarchy_for(iso_bfs, AMGOptions(coarse_size=200))
    assert H.n_levels >= 3
    assert H.n_levels <= min(h.n_levels for h in H.scalar.values())
    for i, (f, c) in enumerate(zip(H.levels, H.levels[1:])):
        nx, ny, n_p = f.sizes
        P = f.P.tocsr()
        assert P[:nx, nx:].nnz == 0 and P[nx:nx + ny, :c.nx].nnz == 0
        assert P[nx:nx + ny, c.nx + c.ny:].nnz == 0 and P[nx + ny:, :c.nx + c.ny].nnz == 0
        G = sp.csr_matrix(f.R @ f.K @ f.P)
        assert abs(G - c.K).max() <= 1e-12 * abs(c.K).max()
        assert abs(c.K - c.K.T).max() <= 1e-12 * abs(c.K).max()
        if c.n <= 400:
            Pd = P.toarray()
            np.testing.assert_allclose(c.K.toarray(), Pd.T @ f.K.toarray() @ Pd, atol=1e-11)
    for row in H.stats()["levels"]:
        assert 0.5 <= row["ratio_drift"] <= 2.0


def test_monolithic_deterministic(iso_channel):
    a, b = hierarchy_for(iso_channel), hierarchy_for(iso_channel)
    assert a.n_levels == b.n_levels
    for la, lb in zip(a.levels, b.levels):
        assert (la.K != lb.K).nnz == 0
    assert a.stats() == b.stats()


def test_monolithic_single_level(iso_channel, rng):
    H = hierarchy_for(iso_channel, AMGOptions(coarse_size=10_000))
    assert H.n_levels == 1
    b = rng.standard_normal(iso_channel.n)
    x = monolithic_vcycle(H, b)
    assert np.linalg.norm(b - iso_channel.K @ x) <= 1e-10 * np.linalg.norm(b)


def test_ratio_drift_guard_stops_coarsening(iso_bfs):
    free = hierarchy_for(iso_bfs, AMGOptions(coarse_size=50, max_ratio_drift=None), smoothers=False)
    tight = hierarchy_for(iso_bfs, AMGOptions(coarse_size=50, max_ratio_drift=1.05), smoothers=False)
    assert tight.n_levels < free.n_levels
    assert any("ratio drift" in n for n in tight.notes)


def test_monolithic_size_checks(iso_channel):
    from stokes_amg.errors import DimensionMismatch
    nx, ny, n_p = iso_channel.sizes
    with pytest.raises(DimensionMismatch):
        build_monolithic_hierarchy(iso_channel.K, (nx, ny, n_p + 1), iso_channel.velocity_block(0),
                                   iso_channel.velocity_block(1), iso_channel.Ap)
