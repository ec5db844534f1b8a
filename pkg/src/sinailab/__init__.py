"""Numerical laboratory for dispersing billiards on flat tables.

Submodules: :mod:`geometry` (tables), :mod:`billiard` (flow, map, Jacobi
transport, dynamical diagnostics), :mod:`eigensolver` (masked-grid Laplace
eigenpairs and boundary traces), :mod:`nodal` (nodal domains and the embedded
nodal graph), :mod:`spectral` (ensemble statistics along the boundary),
:mod:`cli` (experiment runner).
"""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    DIRICHLET,
    NEUMANN,
    Obstacle,
    Rectangle,
    SurfaceSpec,
    Torus,
    boundary_eval,
    build_surface,
    load_surface,
)
