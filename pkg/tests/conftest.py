"""Shared production-scale solves, computed once per session.

The acceptance criteria all consume the same three mode archives: the unit
square (Dirichlet) and the one-disk torus (both boundary conditions).
"""

import pytest

from sinailab.eigensolver import assemble_laplacian, extract_trace, solve_lowest
from sinailab.geometry import build_surface

SQUARE_NX = 201
SQUARE_K = 240
TORUS_NX = 160
TORUS_K = 220


def square_spec(bc="dirichlet"):
    return build_surface({"base": "rectangle", "width": 1.0, "height": 1.0,
                          "bc": bc, "obstacles": []})


def torus_spec(bc):
    return build_surface({"base": "torus", "width": 1.0, "height": 1.0,
                          "bc": bc, "obstacles": [(0.5, 0.5, 0.2)]})


class ModeSet:
    """An operator, its solved eigenpairs, and their boundary traces."""

    def __init__(self, spec, resolution, k):
        self.spec = spec
        self.op = assemble_laplacian(spec, resolution)
        self.pairs = solve_lowest(self.op, k)
        self.traces = [extract_trace(spec, p) if p.lam > 0 else None
                       for p in self.pairs]


@pytest.fixture(scope="session")
def square_d() -> ModeSet:
    return ModeSet(square_spec("dirichlet"), SQUARE_NX, SQUARE_K)


@pytest.fixture(scope="session")
def torus_d() -> ModeSet:
    return ModeSet(torus_spec("dirichlet"), TORUS_NX, TORUS_K)


@pytest.fixture(scope="session")
def torus_n() -> ModeSet:
    return ModeSet(torus_spec("neumann"), TORUS_NX, TORUS_K)
