"""Structured grids and bilinear finite-element assembly.

Two grids: the periodicity cell Y = (0,1] x [0,1] with periodic identification
in y1 and natural (Neumann) lateral boundaries, and the thin rod
(-1,1) x (0, eps) with Dirichlet ends at x1 = +-1.  Elements are bilinear
quadrilaterals on uniform rectangles, integrated with 2x2 Gauss quadrature;
coefficients are sampled at the quadrature points (never interpolated), so
sign-changing weights are integrated accurately.

The rod's fast coordinate is produced by an exactly periodic map: an element's
position within its period is computed with integer arithmetic, so elements
one period apart receive bit-identical evaluation coordinates and assembled
matrices are invariant (bitwise) under translating a periodic coefficient by
one period.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.io
import scipy.sparse as sp

GAUSS_1D = ((1 - 1 / np.sqrt(3.0)) / 2, (1 + 1 / np.sqrt(3.0)) / 2)
MAX_ASPECT = 20.0


class MeshError(ValueError):
    """Invalid grid geometry or boundary handling."""


def _reference_shape():
    """Values and reference gradients of the 4 bilinear shape functions at the
    2x2 Gauss points of the unit square; local node order is counterclockwise
    from the lower-left corner."""
    pts = [(s, t) for t in GAUSS_1D for s in GAUSS_1D]
    N, dNds, dNdt = [], [], []
    for s, t in pts:
        N.append([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])
        dNds.append([-(1 - t), (1 - t), t, -t])
        dNdt.append([-(1 - s), -s, s, 1 - s])
    return np.array(N), np.array(dNds), np.array(dNdt)


_N, _DNDS, _DNDT = _reference_shape()


@dataclass(frozen=True)
class CellGrid:
    """Uniform n1 x n2 partition of the unit cell, periodic in y1."""

    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 2 or self.n2 < 1:
            raise MeshError(f"cell grid {self.n1}x{self.n2} too coarse")

    @property
    def ndof(self) -> int:
        return self.n1 * (self.n2 + 1)

    @property
    def nelem(self) -> int:
        return self.n1 * self.n2

    @property
    def h(self) -> tuple[float, float]:
        return 1.0 / self.n1, 1.0 / self.n2

    def dof(self, i, j):
        return np.asarray(j) * self.n1 + np.asarray(i) % self.n1

    @cached_property
    def element_dofs(self) -> np.ndarray:
        i1, i2 = np.meshgrid(np.arange(self.n1), np.arange(self.n2), indexing="ij")
        i1, i2 = i1.ravel(), i2.ravel()
        return np.column_stack(
            [self.dof(i1, i2), self.dof(i1 + 1, i2), self.dof(i1 + 1, i2 + 1), self.dof(i1, i2 + 1)]
        ).astype(np.int32)

    def quad_points(self):
        """(y1, y2) arrays of shape (4, nelem): cell coordinates of the Gauss points."""
        i1, i2 = np.meshgrid(np.arange(self.n1), np.arange(self.n2), indexing="ij")
        i1, i2 = i1.ravel(), i2.ravel()
        y1 = np.stack([(i1 + s) / self.n1 for t in GAUSS_1D for s in GAUSS_1D])
        y2 = np.stack([(i2 + t) / self.n2 for t in GAUSS_1D for s in GAUSS_1D])
        return y1, y2

    def node_coords(self):
        """(y1, y2) arrays of shape (ndof,) in DOF order."""
        j, i = np.meshgrid(np.arange(self.n2 + 1), np.arange(self.n1), indexing="ij")
        return (i / self.n1).ravel(), (j / self.n2).ravel()


@dataclass(frozen=True)
class RodGrid:
    """Uniform m1 x m2 partition of the rod (-1,1) x (0, eps).

    eps must be the reciprocal of an even integer (the rod then contains the
    integer number 2/eps of coefficient periods) and m1 a multiple of that
    period count, so each period carries the same whole number of elements.
    """

    eps: float
    m1: int
    m2: int

    def __post_init__(self):
        if not (0 < self.eps <= 0.25):
            raise MeshError(f"eps={self.eps} outside (0, 1/4]")
        inv = 1.0 / self.eps
        if abs(inv - round(inv)) > 1e-9 or round(inv) % 2:
            raise MeshError(f"eps={self.eps} is not the reciprocal of an even integer")
        if self.m1 % self.periods:
            raise MeshError(f"m1={self.m1} not a multiple of the period count {self.periods}")
        if self.m2 < 1:
            raise MeshError("m2 must be positive")
        hx, hy = self.h
        aspect = max(hx / hy, hy / hx)
        if aspect > MAX_ASPECT:
            raise MeshError(f"element aspect ratio {aspect:.1f} exceeds {MAX_ASPECT}")

    @property
    def periods(self) -> int:
        return int(round(2.0 / self.eps))

    @property
    def elems_per_period(self) -> int:
        return self.m1 // self.periods

    @property
    def ndof(self) -> int:
        return (self.m1 + 1) * (self.m2 + 1)

    @property
    def nelem(self) -> int:
        return self.m1 * self.m2

    @property
    def h(self) -> tuple[float, float]:
        return 2.0 / self.m1, self.eps / self.m2

    def dof(self, i, j):
        # x1-major ordering keeps the matrix bandwidth at m2+2
        return np.asarray(i) * (self.m2 + 1) + np.asarray(j)

    @cached_property
    def element_dofs(self) -> np.ndarray:
        i1, i2 = np.meshgrid(np.arange(self.m1), np.arange(self.m2), indexing="ij")
        i1, i2 = i1.ravel(), i2.ravel()
        return np.column_stack(
            [self.dof(i1, i2), self.dof(i1 + 1, i2), self.dof(i1 + 1, i2 + 1), self.dof(i1, i2 + 1)]
        ).astype(np.int32)

    @cached_property
    def dirichlet_dofs(self) -> np.ndarray:
        j = np.arange(self.m2 + 1)
        return np.concatenate([self.dof(0, j), self.dof(self.m1, j)])

    def quad_points(self):
        """(x1, x2, y1, y2) arrays of shape (4, nelem).

        x1, x2 are physical coordinates of the Gauss points; y1, y2 the fast
        cell coordinates x/eps reduced into [0,1) by the exact periodic map.
        """
        i1, i2 = np.meshgrid(np.arange(self.m1), np.arange(self.m2), indexing="ij")
        i1, i2 = i1.ravel(), i2.ravel()
        p = self.elems_per_period
        r1 = i1 % p
        hx, hy = self.h
        x1 = np.stack([-1.0 + (i1 + s) * hx for t in GAUSS_1D for s in GAUSS_1D])
        x2 = np.stack([(i2 + t) * hy for t in GAUSS_1D for s in GAUSS_1D])
        y1 = np.stack([(r1 + s) / p for t in GAUSS_1D for s in GAUSS_1D])
        y2 = np.stack([(i2 + t) / self.m2 for t in GAUSS_1D for s in GAUSS_1D])
        return x1, x2, y1, y2

    def node_coords(self):
        """(x1, x2) arrays of shape (ndof,) in DOF order."""
        i, j = np.meshgrid(np.arange(self.m1 + 1), np.arange(self.m2 + 1), indexing="ij")
        return (-1.0 + 2.0 * i / self.m1).ravel(), (self.eps * j / self.m2).ravel()

    def node_fast_coords(self):
        """(y1, y2) fast cell coordinates of the nodes, exact periodic map."""
        i, j = np.meshgrid(np.arange(self.m1 + 1), np.arange(self.m2 + 1), indexing="ij")
        p = self.elems_per_period
        return ((i % p) / p).ravel(), (j / self.m2).ravel()


Grid = CellGrid | RodGrid


def _grid_h(grid: Grid) -> tuple[float, float]:
    return grid.h


def _qweight(grid: Grid) -> float:
    hx, hy = grid.h
    return hx * hy / 4.0  # each of the 4 Gauss points carries a quarter of the element area


def _as_q(field, nq: int, nelem: int) -> np.ndarray:
    arr = np.asarray(field, dtype=float)
    if arr.ndim == 0:
        return np.broadcast_to(arr, (nq, nelem))
    if arr.shape != (nq, nelem):
        raise ValueError(f"coefficient array must be scalar or shape ({nq},{nelem}), got {arr.shape}")
    return arr


def _accumulate(grid: Grid, vals: np.ndarray) -> sp.csr_array:
    dofs = grid.element_dofs
    rows = np.broadcast_to(dofs[:, :, None], vals.shape)
    cols = np.broadcast_to(dofs[:, None, :], vals.shape)
    mat = sp.coo_array((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(grid.ndof, grid.ndof)).tocsr()
    out = ((mat + mat.T) * 0.5).tocsr()  # exact symmetrization (both halves hold identical values)
    if not np.all(np.isfinite(out.data)):
        raise ValueError("assembled matrix has non-finite entries")
    return out


def assemble_stiffness(grid: Grid, a11, a12, a22) -> sp.csr_array:
    """Assemble the energy matrix of grad phi_i . a grad phi_j.

    a11, a12, a22 are scalars or (4, nelem) arrays sampled at the Gauss
    points returned by grid.quad_points() (a21 = a12 by symmetry).  Natural
    boundaries need no boundary terms; periodic identification is in the DOF
    map.
    """
    hx, hy = grid.h
    w = _qweight(grid)
    nel = grid.nelem
    a11 = _as_q(a11, 4, nel)
    a12 = _as_q(a12, 4, nel)
    a22 = _as_q(a22, 4, nel)
    vals = np.zeros((nel, 4, 4))
    for q in range(4):
        gx = _DNDS[q] / hx
        gy = _DNDT[q] / hy
        xx = np.outer(gx, gx)
        yy = np.outer(gy, gy)
        xy = np.outer(gx, gy)
        xy = xy + xy.T
        vals += w * (
            a11[q][:, None, None] * xx + a12[q][:, None, None] * xy + a22[q][:, None, None] * yy
        )
    return _accumulate(grid, vals)


def assemble_mass(grid: Grid, weight=1.0) -> sp.csr_array:
    """Assemble the weighted mass matrix of w phi_i phi_j; w may change sign."""
    w = _qweight(grid)
    wq = _as_q(weight, 4, grid.nelem)
    vals = np.zeros((grid.nelem, 4, 4))
    for q in range(4):
        nn = np.outer(_N[q], _N[q])
        vals += w * wq[q][:, None, None] * nn
    return _accumulate(grid, vals)


def assemble_flux_load(grid: Grid, f1, f2) -> np.ndarray:
    """Assemble the load vector of (f1, f2) . grad phi_i.

    This is the weak form of a divergence right-hand side with the derivative
    moved onto the test functions, so no coefficient derivatives are needed:
    the corrector equation with source div(a e_1) uses f = -(a11, a12).
    """
    hx, hy = grid.h
    w = _qweight(grid)
    nel = grid.nelem
    f1 = _as_q(f1, 4, nel)
    f2 = _as_q(f2, 4, nel)
    vals = np.zeros((nel, 4))
    for q in range(4):
        gx = _DNDS[q] / hx
        gy = _DNDT[q] / hy
        vals += w * (f1[q][:, None] * gx[None, :] + f2[q][:, None] * gy[None, :])
    out = np.zeros(grid.ndof)
    np.add.at(out, grid.element_dofs.ravel(), vals.ravel())
    return out


def quad_values(grid: Grid, u: np.ndarray) -> np.ndarray:
    """Values of the nodal field u at the Gauss points, shape (4, nelem)."""
    ue = np.asarray(u)[grid.element_dofs]  # (nelem, 4)
    return _N @ ue.T


def quad_gradients(grid: Grid, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradient components of the nodal field u at the Gauss points.

    Returns (du/dx1, du/dx2), each of shape (4, nelem), in physical
    coordinates (the cell's fast coordinates for a CellGrid).
    """
    hx, hy = grid.h
    ue = np.asarray(u)[grid.element_dofs]
    return (_DNDS @ ue.T) / hx, (_DNDT @ ue.T) / hy


def integrate_quad(grid: Grid, values) -> float:
    """Integral over the grid's domain of a quantity sampled at Gauss points."""
    vq = _as_q(values, 4, grid.nelem)
    return float(np.sum(vq) * _qweight(grid))


@dataclass(frozen=True)
class DirichletMap:
    """Restriction/prolongation between full and reduced DOF vectors."""

    ndof: int
    keep: np.ndarray  # kept (free) DOF indices, ascending

    def restrict(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v)[..., self.keep]

    def extend(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        out = np.zeros(v.shape[:-1] + (self.ndof,), dtype=v.dtype)
        out[..., self.keep] = v
        return out


def apply_dirichlet(matrix: sp.csr_array, dofs) -> tuple[sp.csr_array, DirichletMap]:
    """Eliminate the given DOFs symmetrically (row and column removal)."""
    n = matrix.shape[0]
    drop = np.zeros(n, dtype=bool)
    drop[np.asarray(dofs, dtype=int)] = True
    keep = np.flatnonzero(~drop)
    if keep.size == 0:
        raise MeshError("Dirichlet elimination removed every DOF")
    reduced = matrix[keep][:, keep].tocsr()
    return reduced, DirichletMap(ndof=n, keep=keep)


def write_matrix_market(path: str, matrix: sp.csr_array) -> None:
    """Dump a matrix in Matrix Market coordinate format (debugging aid)."""
    scipy.io.mmwrite(path, sp.coo_array(matrix), symmetry="symmetric")
