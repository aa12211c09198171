"""Session-wide fixtures for the expensive cell and sweep computations.

The square-grid eigenvalue table and the localized-problem effective model
are needed by both the unit tests and the acceptance suite; computing them
once keeps the full run well inside its time budget.
"""

import pytest

from thinspec import finescale
from thinspec.cell import build_effective_model, principal_cell_eig
from thinspec.mesh_fem import CellGrid
from thinspec.problems import builtin_problem


@pytest.fixture(scope="session")
def p_const_square_mu():
    """mu(0) of the constant-coefficient problem on square n x n grids."""
    p = builtin_problem("p_const")
    return {n: principal_cell_eig(p, 0.0, CellGrid(n, n)).mu for n in (64, 96, 128, 192)}


@pytest.fixture(scope="session")
def p_loc_model():
    """Full effective model of the localized builtin problem (default grids)."""
    return build_effective_model(builtin_problem("p_loc"))


@pytest.fixture(scope="session")
def pencil_registry():
    """Every generalized-pencil shape the suite solves at <= 3000 unknowns.

    Cell entries are (label, problem, grid, x1) for principal solves; rod
    entries are (label, assembled rod pencil) covering the fine and coarse
    eps = 1/8 rods and the coarse eps = 1/16 rod.  Larger instances exceed
    the dense-solve cap and are cross-checked by refinement trends instead.
    """
    p_const = builtin_problem("p_const")
    p_loc = builtin_problem("p_loc")
    cells = (
        ("p_const cell 24x24", p_const, CellGrid(24, 24), 0.0),
        ("p_const cell 32x4", p_const, CellGrid(32, 4), 0.0),
        ("p_loc cell 32x4", p_loc, CellGrid(32, 4), 0.0),
        ("p_loc cell 64x8", p_loc, CellGrid(64, 8), 0.0),
        ("p_loc cell 64x8 off-center", p_loc, CellGrid(64, 8), 0.35),
        ("p_loc cell 128x8", p_loc, CellGrid(128, 8), 0.0),
    )
    rods = []
    for eps, per_period in ((0.125, 24), (0.125, 12), (0.0625, 17)):
        policy = finescale.ResolutionPolicy(per_period=per_period, m2=4)
        rod = finescale.assemble_rod(p_loc, eps, policy)
        assert rod.ndof <= 3000
        rods.append((f"p_loc rod eps=1/{round(1 / eps)} pp={per_period}", rod))
    return {"cells": cells, "rods": tuple(rods)}
