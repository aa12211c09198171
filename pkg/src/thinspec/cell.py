"""Cell-problem analysis: the principal eigenvalue curve mu(x1), correctors,
and the effective coefficients of the limiting oscillator.

The pipeline at a slow coordinate x1:

* assemble the cell pencil (A, B, M) and extract the principal positive pair
  (mu, Psi), normalized Psi' B Psi = 1 and Psi > 0;
* mu'(x1) by first-order perturbation theory with the coefficient derivatives
  taken as central differences of the expressions (step 1e-6);
* mu''(0) by a 5-point second-difference stencil at steps h and h/2 combined
  by Richardson extrapolation (h = 0.05), together with a coarse scan that
  certifies x1 = 0 is the interior minimum of mu (raises H6Violated if not);
* periodic correctors with a zero-mean gauge, for both the plain coefficient
  (axial effective coefficient a_eff, via the harmonic-mean-like cell formula)
  and the Psi^2-weighted coefficient (effective matrix A_eff);
* the drift coefficient c_eff from central differences of the Psi field in x1.

Scalar outputs (mu, a_eff, A_eff entries) converge at O(h^2) on these
bilinear elements, so where tolerances are tight they are computed on two
nested grids and Richardson-extrapolated; the h^2 model is also what the
grid-stability tests check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .eigen import LUFactor, principal_positive
from .mesh_fem import (
    CellGrid,
    assemble_flux_load,
    assemble_mass,
    assemble_stiffness,
    integrate_quad,
    quad_gradients,
    quad_values,
)
from .problems import CoefficientProblem

COEFF_FD_STEP = 1e-6  # for d/dx1 of coefficient expressions
PSI_FD_STEP = 0.02  # for d/dx1 of the Psi field (c_eff)
MU2_FD_STEP = 0.05  # base step of the mu''(0) stencil
H6_SCAN = (-1.0, -0.75, -0.5, -0.25, 0.25, 0.5, 0.75, 1.0)


class CellError(RuntimeError):
    """Internal consistency failure in the cell pipeline."""


class H6Violated(CellError):
    """mu(x1) does not have a strict interior minimum at x1 = 0 with positive
    curvature; the oscillator construction does not apply."""

    def __init__(self, message, mu2=None, scan=None):
        super().__init__(message)
        self.mu2 = mu2
        self.scan = scan or []


@dataclass(frozen=True)
class CellEigenpair:
    """Principal positive eigenpair of the cell pencil at a slow coordinate.

    psi is nodal on ``grid``, strictly positive, normalized psi' B psi = 1.
    """

    x1: float
    mu: float
    psi: np.ndarray
    residual: float
    normalization: float
    grid: CellGrid


@dataclass(frozen=True)
class CorrectorField:
    """Periodic corrector on a cell grid with zero-mean gauge."""

    kind: str  # "case1" or "weighted-1" / "weighted-2"
    x1: float
    values: np.ndarray
    grid: CellGrid
    mean: float  # M-weighted mean after the gauge fix (diagnostic, ~0)


def build_cell_pencil(problem: CoefficientProblem, x1: float, grid: CellGrid):
    """(A, B, M): energy, signed-weight mass, and plain mass matrices at x1."""
    y1, y2 = grid.quad_points()
    a11, a12, a22 = problem.a_values(x1, y1, y2)
    A = assemble_stiffness(grid, a11, a12, a22)
    B = assemble_mass(grid, problem.rho_values(x1, y1, y2))
    M = assemble_mass(grid)
    return A, B, M


def principal_cell_eig(problem: CoefficientProblem, x1: float, grid: CellGrid) -> CellEigenpair:
    """Principal positive cell eigenpair; NoPositivePrincipal when the weight's
    cell average is nonnegative on the mesh."""
    A, B, M = build_cell_pencil(problem, x1, grid)
    pair = principal_positive(A, B, M)
    norm = float(pair.psi @ (B @ pair.psi))
    return CellEigenpair(x1=x1, mu=pair.mu, psi=pair.psi, residual=pair.residual,
                         normalization=norm, grid=grid)


def mu_prime(problem: CoefficientProblem, x1: float, grid: CellGrid,
             pair: CellEigenpair | None = None) -> float:
    """d mu / d x1 by eigenvalue perturbation:

        mu' = int da/dx1 grad(Psi).grad(Psi) - mu int drho/dx1 Psi^2

    with Psi' B Psi = 1.  Coefficient x1-derivatives are central differences
    of the expressions with step 1e-6.
    """
    if pair is None:
        pair = principal_cell_eig(problem, x1, grid)
    elif pair.grid is not grid and pair.grid != grid:
        raise CellError("eigenpair was computed on a different grid")
    d = COEFF_FD_STEP
    y1, y2 = grid.quad_points()
    ap = problem.a_values(x1 + d, y1, y2)
    am = problem.a_values(x1 - d, y1, y2)
    da11, da12, da22 = ((p - m) / (2 * d) for p, m in zip(ap, am))
    drho = (problem.rho_values(x1 + d, y1, y2) - problem.rho_values(x1 - d, y1, y2)) / (2 * d)
    Aprime = assemble_stiffness(grid, da11, da12, da22)
    Bprime = assemble_mass(grid, drho)
    psi = pair.psi
    return float(psi @ (Aprime @ psi)) - pair.mu * float(psi @ (Bprime @ psi))


@dataclass(frozen=True)
class CurvatureResult:
    value: float  # mu''(0), Richardson-extrapolated
    estimate_h: float  # 5-point stencil at the base step
    estimate_half: float  # 5-point stencil at half the base step
    scan: tuple  # ((x1, mu), ...) including x1 = 0, ascending in x1


def _stencil_second(mu_of: dict, s: float) -> float:
    return (-mu_of[2 * s] + 16 * mu_of[s] - 30 * mu_of[0.0] + 16 * mu_of[-s] - mu_of[-2 * s]) / (
        12 * s * s
    )


def mu_second_at_zero(problem: CoefficientProblem, grid: CellGrid,
                      scan_grid: CellGrid | None = None, h: float = MU2_FD_STEP) -> CurvatureResult:
    """mu''(0) with an H6 verdict.

    Two 5-point stencils (steps h and h/2, sharing the x1 = +-h evaluations)
    are Richardson-combined: (16 D_{h/2} - D_h)/15, eliminating the h^2 and
    h^4 truncation terms.  The verdict additionally requires mu(0) to be the
    strict minimum over a coarse scan of [-1, 1]; either failure raises
    H6Violated carrying the scan table.
    """
    xs = sorted({0.0, h / 2, -h / 2, h, -h, 2 * h, -2 * h})
    mu_of = {x: principal_cell_eig(problem, x, grid).mu for x in xs}
    d_h = _stencil_second(mu_of, h)
    d_half = _stencil_second(mu_of, h / 2)
    mu2 = (16 * d_half - d_h) / 15

    sgrid = scan_grid or grid
    mu0_scan = principal_cell_eig(problem, 0.0, sgrid).mu
    scan = [(0.0, mu0_scan)]
    for x in H6_SCAN:
        scan.append((x, principal_cell_eig(problem, x, sgrid).mu))
    scan.sort()
    margin = 1e-8 * (1.0 + abs(mu0_scan))
    off_center = min(m for x, m in scan if x != 0.0)
    result = CurvatureResult(value=mu2, estimate_h=d_h, estimate_half=d_half, scan=tuple(scan))
    if not mu2 > 0:
        raise H6Violated(f"mu''(0) = {mu2:.6e} is not positive", mu2=mu2, scan=result.scan)
    if not mu0_scan < off_center - margin:
        raise H6Violated(
            f"mu(0) = {mu0_scan:.9g} is not a strict interior minimum "
            f"(scan minimum away from 0 is {off_center:.9g})",
            mu2=mu2, scan=result.scan,
        )
    return result


def _solve_zero_mean(K: sp.csr_array, M: sp.csr_array, rhs: np.ndarray) -> tuple[np.ndarray, float]:
    """Solve the singular periodic system K u = rhs under the gauge 1'M u = 0.

    The constraint is appended as a Lagrange multiplier; for a compatible
    right-hand side (1'rhs = 0) the multiplier vanishes, which is verified, so
    the returned field satisfies the original weak equations, not a modified
    system."""
    n = K.shape[0]
    m = M @ np.ones(n)
    S = sp.block_array([[K, m[:, None]], [m[None, :], None]]).tocsc()
    x = LUFactor(S).solve(np.concatenate([rhs, [0.0]]))
    u, lam = x[:n], x[n]
    scale = 1.0 + float(np.max(np.abs(rhs)))
    if abs(lam) > 1e-10 * scale:
        raise CellError(f"incompatible corrector right-hand side (multiplier {lam:.3e})")
    mean = float(m @ u)
    if abs(mean) > 1e-12 * max(1.0, float(np.max(np.abs(u)))):
        raise CellError(f"zero-mean gauge violated (mean {mean:.3e})")
    return u, mean


def _corrector_rhs(grid: CellGrid, ak1, ak2) -> np.ndarray:
    # weak form of div(a e_k): the derivative sits on the test function
    return -assemble_flux_load(grid, ak1, ak2)


def corrector_case1(problem: CoefficientProblem, x1: float, grid: CellGrid,
                    extrapolate: bool = True) -> tuple[CorrectorField, float]:
    """Axial corrector for the plain coefficient and its effective value

        a_eff(x1) = int a_11 (1 + dN/dy1) + a_12 dN/dy2 dy.

    The scalar is Richardson-extrapolated from ``grid`` and its 2:1 coarsening
    (the corrector field returned is the fine-grid one); pass
    ``extrapolate=False`` for the raw single-grid value.
    """

    def solve_on(g: CellGrid):
        y1, y2 = g.quad_points()
        a11, a12, a22 = (np.broadcast_to(v, y1.shape) for v in problem.a_values(x1, y1, y2))
        K = assemble_stiffness(g, a11, a12, a22)
        M = assemble_mass(g)
        N, mean = _solve_zero_mean(K, M, _corrector_rhs(g, a11, a12))
        g1, g2 = quad_gradients(g, N)
        a_eff = integrate_quad(g, a11 * (1.0 + g1) + a12 * g2)
        return N, mean, a_eff

    N, mean, a_fine = solve_on(grid)
    a_eff = a_fine
    if extrapolate and grid.n1 % 2 == 0 and grid.n2 % 2 == 0 and grid.n1 >= 4 and grid.n2 >= 2:
        _, _, a_coarse = solve_on(CellGrid(grid.n1 // 2, grid.n2 // 2))
        a_eff = (4.0 * a_fine - a_coarse) / 3.0
    fld = CorrectorField(kind="case1", x1=x1, values=N, grid=grid, mean=mean)
    return fld, a_eff


def corrector_weighted(problem: CoefficientProblem, grid: CellGrid, pair: CellEigenpair
                       ) -> tuple[list[CorrectorField], np.ndarray, np.ndarray]:
    """Correctors N_1, N_2 for the Psi^2-weighted coefficient at x1 = 0 and the
    effective matrix computed two ways.

    Returns (fields, A_energy, A_defining): A_energy[i][k] is the energy form
    int a_Psi grad(N_k + z_k).grad(N_i + z_i), symmetric positive semidefinite
    by construction (the transverse entry degenerates to 0 when the weight is
    y2-independent, since N_2 = 1/2 - z_2 then zeroes the transverse flux);
    A_defining[i][k] = int (a_Psi)_il (delta_lk + dN_k/dz_l) is the plain
    defining integral.  The two agree to solver precision (Galerkin
    orthogonality), which the caller is expected to assert.
    """
    if pair.grid != grid:
        raise CellError("weighted corrector needs Psi on the assembly grid")
    y1, y2 = grid.quad_points()
    a11, a12, a22 = (np.broadcast_to(v, y1.shape) for v in problem.a_values(pair.x1, y1, y2))
    psi_q = quad_values(grid, pair.psi)
    w = psi_q * psi_q
    w11, w12, w22 = a11 * w, a12 * w, a22 * w
    K = assemble_stiffness(grid, w11, w12, w22)
    M = assemble_mass(grid)
    fields = []
    grads = []
    for k, (f1, f2) in enumerate(((w11, w12), (w12, w22)), start=1):
        N, mean = _solve_zero_mean(K, M, _corrector_rhs(grid, f1, f2))
        fields.append(CorrectorField(kind=f"weighted-{k}", x1=pair.x1, values=N, grid=grid,
                                     mean=mean))
        grads.append(quad_gradients(grid, N))
    e = [(1.0, 0.0), (0.0, 1.0)]
    flux = []  # a_Psi (grad N_k + e_k) for k = 1, 2
    for k in range(2):
        t1 = grads[k][0] + e[k][0]
        t2 = grads[k][1] + e[k][1]
        flux.append((w11 * t1 + w12 * t2, w12 * t1 + w22 * t2))
    A_energy = np.empty((2, 2))
    A_defining = np.empty((2, 2))
    for i in range(2):
        s1 = grads[i][0] + e[i][0]
        s2 = grads[i][1] + e[i][1]
        for k in range(2):
            A_energy[i, k] = integrate_quad(grid, flux[k][0] * s1 + flux[k][1] * s2)
            A_defining[i, k] = integrate_quad(grid, flux[k][0] * e[i][0] + flux[k][1] * e[i][1])
    return fields, A_energy, A_defining


def c_effective(problem: CoefficientProblem, grid: CellGrid, pair_minus: CellEigenpair,
                pair_zero: CellEigenpair, pair_plus: CellEigenpair) -> float:
    """Drift coefficient

        c_eff = int [ dPsi/dx1 (a grad Psi)_1 - d(a grad Psi)_1/dx1 Psi ] dy

    at x1 = 0, with d/dx1 as central differences of the (consistently signed
    and normalized) eigenfields at x1 = -h, 0, +h.
    """
    h = pair_plus.x1
    if not (pair_minus.x1 == -h and pair_zero.x1 == 0.0 and h > 0):
        raise CellError("c_effective needs eigenpairs at x1 = -h, 0, +h")
    for p in (pair_minus, pair_plus):
        if float(p.psi @ pair_zero.psi) <= 0:
            raise CellError("eigenfield sign flipped between FD samples")

    def axial_flux(pair: CellEigenpair):
        y1, y2 = grid.quad_points()
        a11, a12, _ = problem.a_values(pair.x1, y1, y2)
        g1, g2 = quad_gradients(grid, pair.psi)
        return a11 * g1 + a12 * g2

    dpsi_dx = (quad_values(grid, pair_plus.psi) - quad_values(grid, pair_minus.psi)) / (2 * h)
    dflux_dx = (axial_flux(pair_plus) - axial_flux(pair_minus)) / (2 * h)
    psi0_q = quad_values(grid, pair_zero.psi)
    integrand = dpsi_dx * axial_flux(pair_zero) - dflux_dx * psi0_q
    return integrate_quad(grid, integrand)


def rho_psi_average(problem: CoefficientProblem, grid: CellGrid, pair: CellEigenpair) -> float:
    """Cell average of rho Psi^2 at the pair's x1; equals 1 under the default
    normalization, recomputed by direct quadrature as a consistency hook."""
    y1, y2 = grid.quad_points()
    rho = problem.rho_values(pair.x1, y1, y2)
    psi_q = quad_values(grid, pair.psi)
    return integrate_quad(grid, rho * psi_q * psi_q)


@dataclass(frozen=True)
class EffectiveModel:
    """Inputs of the limiting harmonic-oscillator spectrum."""

    mu0: float  # cell eigenvalue at x1 = 0
    mu2: float  # curvature mu''(0) > 0
    a_eff: float  # axial effective coefficient (> 0)
    c_eff: float  # drift coefficient
    rho_psi_avg: float  # cell average of rho Psi^2 (1 under default normalization)
    a_eff_matrix: np.ndarray  # 2x2 weighted effective matrix
    provenance: dict = field(repr=False)

    @property
    def theta(self) -> float:
        """Oscillator frequency parameter mu''(0) / (2 a_eff)."""
        return self.mu2 / (2.0 * self.a_eff)

    def to_dict(self) -> dict:
        """JSON-ready summary (numpy containers converted to lists)."""

        def plain(v):
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, (np.floating, np.integer)):
                return v.item()
            if isinstance(v, dict):
                return {k: plain(x) for k, x in v.items()}
            if isinstance(v, (list, tuple)):
                return [plain(x) for x in v]
            return v

        return {
            "mu0": float(self.mu0),
            "mu2": float(self.mu2),
            "a_eff": float(self.a_eff),
            "c_eff": float(self.c_eff),
            "rho_psi_avg": float(self.rho_psi_avg),
            "theta": float(self.theta),
            "a_eff_matrix": self.a_eff_matrix.tolist(),
            "provenance": plain(self.provenance),
        }


def _cell_grids(problem: CoefficientProblem, n1: int) -> tuple[CellGrid, CellGrid]:
    """Fine and 2:1-coarsened cell grids; y2-independent problems carry a
    token transverse resolution since every field is constant in y2."""
    if problem.depends_on_y2:
        return CellGrid(n1, n1), CellGrid(n1 // 2, n1 // 2)
    n2 = 8
    return CellGrid(n1, n2), CellGrid(n1 // 2, n2 // 2)


def build_effective_model(problem: CoefficientProblem, n1: int = 64,
                          weighted_aeff: bool = True) -> EffectiveModel:
    """Orchestrate the full cell analysis at x1 = 0.

    Scalars with tight tolerances (mu0, the effective matrix) are
    Richardson-extrapolated across the fine grid and its 2:1 coarsening.
    c_eff is validated by a step-halving check of its x1 differences.
    weighted_aeff selects the Psi^2-weighted axial coefficient (default);
    otherwise the plain-coefficient corrector value is used.
    """
    fine, coarse = _cell_grids(problem, n1)
    mu_fine_pair = principal_cell_eig(problem, 0.0, fine)
    mu_coarse_pair = principal_cell_eig(problem, 0.0, coarse)
    if problem.depends_on_y2:
        mu0_grids = (fine, coarse)
        mu0 = (4.0 * mu_fine_pair.mu - mu_coarse_pair.mu) / 3.0
    else:
        # y2-independent fields make axial refinement nearly free; a finer
        # pair keeps the extrapolated mu0 error well below the rod solves'
        mu0_grids = (CellGrid(2 * n1, fine.n2), fine)
        mu_extra = principal_cell_eig(problem, 0.0, mu0_grids[0]).mu
        mu0 = (4.0 * mu_extra - mu_fine_pair.mu) / 3.0

    curvature = mu_second_at_zero(problem, fine, scan_grid=coarse)

    _, A_fine, D_fine = corrector_weighted(problem, fine, mu_fine_pair)
    _, A_coarse, _ = corrector_weighted(problem, coarse, mu_coarse_pair)
    forms_gap = float(np.max(np.abs(A_fine - D_fine))) / max(abs(A_fine[0, 0]), 1e-300)
    if forms_gap > 1e-10:
        raise CellError(f"energy and defining forms of A_eff disagree by {forms_gap:.3e}")
    A_eff = (4.0 * A_fine - A_coarse) / 3.0

    _, a_case1 = corrector_case1(problem, 0.0, fine)

    h = PSI_FD_STEP
    pairs = {dx: principal_cell_eig(problem, dx, fine) for dx in (-h, -h / 2, h / 2, h)}
    c_h = c_effective(problem, fine, pairs[-h], mu_fine_pair, pairs[h])
    c_half = c_effective(problem, fine, pairs[-h / 2], mu_fine_pair, pairs[h / 2])
    if abs(c_h - c_half) > 1e-3 * (1.0 + abs(c_half)):
        raise CellError(
            f"c_eff not stable under step halving: {c_h:.6e} vs {c_half:.6e}")
    c_eff = c_half

    rho_avg = rho_psi_average(problem, fine, mu_fine_pair)
    if rho_avg == 0.0:
        raise CellError("rho Psi^2 average vanished")
    a_eff = float(A_eff[0, 0]) if weighted_aeff else a_case1
    if not a_eff > 0:
        raise CellError(f"effective axial coefficient {a_eff:.3e} is not positive")

    provenance = {
        "fine_grid": (fine.n1, fine.n2),
        "coarse_grid": (coarse.n1, coarse.n2),
        "mu0_grids": ((mu0_grids[0].n1, mu0_grids[0].n2),
                      (mu0_grids[1].n1, mu0_grids[1].n2)),
        "mu0_fine": mu_fine_pair.mu,
        "mu0_coarse": mu_coarse_pair.mu,
        "fd_steps": {"coefficient": COEFF_FD_STEP, "psi": h, "mu2": MU2_FD_STEP},
        "mu2_estimates": (curvature.estimate_h, curvature.estimate_half),
        "scan": curvature.scan,
        "aeff_mode": "weighted" if weighted_aeff else "unweighted",
        "aeff_case1": a_case1,
        "aeff_forms_gap": forms_gap,
        "c_eff_steps": (c_h, c_half),
        "eig_residuals": (mu_fine_pair.residual, mu_coarse_pair.residual),
    }
    return EffectiveModel(mu0=mu0, mu2=curvature.value, a_eff=a_eff, c_eff=c_eff,
                          rho_psi_avg=rho_avg, a_eff_matrix=A_eff, provenance=provenance)
