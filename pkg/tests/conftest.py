import numpy as np
import pytest
import scipy.sparse as sp

from stokes_amg.fem import assemble_scott_vogelius, assemble_taylor_hood, iso_companion
from stokes_amg.mesh import BackwardFacingStep, barycentric_refine, channel, structured_tri_mesh


def poisson_2d(n):
    """5-point Laplacian on an ``n x n`` interior grid."""
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1])
    I = sp.identity(n)
    return sp.csr_matrix(sp.kron(I, T) + sp.kron(T, I))


def poisson_1d(n):
    return sp.csr_matrix(sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1]))


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


@pytest.fixture(scope="session")
def th_channel():
    return assemble_taylor_hood(structured_tri_mesh(8, 4, channel(2.0, 1.0)), "Channel2D")


@pytest.fixture(scope="session")
def th_bfs4():
    return assemble_taylor_hood(structured_tri_mesh(24, 8, BackwardFacingStep()), "BFS2D")


@pytest.fixture(scope="session")
def sv_bfs2():
    m = barycentric_refine(structured_tri_mesh(12, 4, BackwardFacingStep()))[0]
    return assemble_scott_vogelius(m, "BFS2D")


@pytest.fixture(scope="session")
def iso_channel(th_channel):
    return iso_companion(th_channel)


# -- acceptance reporting -----------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one PASS/FAIL line and asserts ``ok``."""
    state = {}

    def report(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} | {detail}"
        state["line"] = line
        request.config._acceptance_lines.append(line)
        print(line)
        assert ok, line

    yield report
    if "line" not in state:
        n = request.node.name.split("_")[1].lstrip("c")
        line = f"criterion {n}: FAIL | did not complete"
        request.config._acceptance_lines.append(line)
        print(line)
