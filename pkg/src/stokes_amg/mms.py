"""Manufactured-solution convergence study for the TH and SV discretizations."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (StokesProblem, assemble_scott_vogelius, assemble_taylor_hood,
                  elementwise_divergence, l2_error)
from .mesh import barycentric_refine, structured_tri_mesh

PI = np.pi


def exact_velocity(xy):
    x, y = xy[:, 0], xy[:, 1]
    return np.stack([np.sin(PI * x) * np.sin(PI * y), np.cos(PI * x) * np.cos(PI * y)], axis=1)


def exact_pressure(xy):
    return np.sin(PI * xy[:, 0])


def forcing(xy):
    """``-lap u + grad p`` for the fields above (``u`` is divergence free)."""
    x = xy[:, 0]
    f = 2.0 * PI ** 2 * exact_velocity(xy)
    f[:, 0] += PI * np.cos(PI * x)
    return f


PRESSURE_MEAN = 2.0 / PI   # mean of sin(pi x) over the unit square


def manufactured_problem():
    return StokesProblem("Custom", exact_velocity, forcing)


def linear_problem():
    """Linear velocity with constant pressure: reproduced exactly by both pairs."""
    def u(xy):
        return np.stack([xy[:, 0] + 2.0 * xy[:, 1], 3.0 * xy[:, 0] - xy[:, 1]], axis=1)
    return StokesProblem("Custom", u, None)


def direct_solve(sys):
    """Solve an enclosed-flow system with a zero-mean pressure multiplier."""
    m = sys.Mp @ np.ones(sys.n_p)
    c = np.concatenate([np.zeros(sys.n_u), m])
    K = sp.bmat([[sys.K, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]], format="csc")
    x = spla.spsolve(K, np.concatenate([sys.rhs, [0.0]]))
    return x[:sys.n]


@dataclass
class MMSRow:
    disc: str
    n: int
    h: float
    dofs: int
    velocity_error: float
    pressure_error: float
    divergence: float
    velocity_order: float = float("nan")
    pressure_order: float = float("nan")


def mms_errors(disc, n, problem=None, p_exact=exact_pressure, p_mean=PRESSURE_MEAN):
    """Errors of the discrete solution on an ``n x n`` unit-square mesh.

    ``divergence`` is ``max_T ||div u_h||_{L2(T)} / ||u_h||_{L2}``.
    """
    problem = problem or manufactured_problem()
    mesh = structured_tri_mesh(n, n)
    if disc == "SV":
        sys = assemble_scott_vogelius(barycentric_refine(mesh)[0], problem)
    elif disc == "TH":
        sys = assemble_taylor_hood(mesh, problem)
    else:
        raise ValueError(f"unknown discretization {disc!r}")
    x = direct_solve(sys)
    u = sys.expand_velocity(x[:sys.n_u])
    p = x[sys.n_u:]
    V = sys.velocity_space
    eu = l2_error(V, u, problem.velocity)
    ep = l2_error(sys.pressure_space, p + p_mean, p_exact)
    unorm = l2_error(V, u, lambda xy: np.zeros((len(xy), 2)))
    div = float(np.sqrt(elementwise_divergence(V, u).max()) / unorm) if unorm > 0 else 0.0
    return MMSRow(disc, n, 1.0 / n, sys.n, eu, ep, div)


def mms_study(disc, refinements=(8, 16, 32)):
    """Rows with observed orders ``log2(e_{k-1} / e_k) / log2(h_{k-1} / h_k)``."""
    rows = [mms_errors(disc, n) for n in refinements]
    for a, b in zip(rows, rows[1:]):
        r = np.log(a.h / b.h)
        b.velocity_order = float(np.log(a.velocity_error / b.velocity_error) / r)
        b.pressure_order = float(np.log(a.pressure_error / b.pressure_error) / r)
    return rows
