"""Monolithic smoothed-aggregation AMG for 2D Stokes saddle-point systems.

Assembly of Taylor-Hood, Scott-Vogelius and P1isoP2/P1 systems, additive
Vanka relaxation, and FGMRES with defect-correction, monolithic AMG and
inexact Uzawa preconditioners.
"""
from .config import SolverConfig
from .fem import assemble_iso, assemble_scott_vogelius, assemble_taylor_hood, iso_companion
from .krylov import KrylovReport, fgmres
from .mesh import (BackwardFacingStep, Rectangle, barycentric_refine, channel, quadrisect,
                   read_mesh, structured_tri_mesh)
from .precond import build_preconditioner, parameter_scan, solve

__version__ = "0.1.0"

__all__ = [
    "SolverConfig", "assemble_iso", "assemble_scott_vogelius", "assemble_taylor_hood",
    "iso_companion", "KrylovReport", "fgmres", "BackwardFacingStep", "Rectangle",
    "barycentric_refine", "channel", "quadrisect", "read_mesh", "structured_tri_mesh",
    "build_preconditioner", "parameter_scan", "solve",
]
