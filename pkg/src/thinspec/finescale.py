"""Thin-rod eigenvalue solves and the asymptotic verification sweep.

The original problem lives on the rod (-1,1) x (0, eps): stiffness
coefficient a(x1, x/eps), sign-changing weight rho(x1, x/eps), Dirichlet
ends, natural lateral boundary.  For admissible eps (reciprocals of even
integers, so the rod holds a whole number of coefficient periods) the
positive branch of the spectrum is compared against the two-term prediction
mu(0)/eps^2 + nu_j/eps:

* observed eigenvalues are h^2-extrapolated across a 2:1 mesh pair (the raw
  single-mesh error at feasible resolutions is amplified by 1/eps in the
  first-order comparison and would bury the trend),
* predictions combine the effective cell model with the closed-form
  oscillator spectrum,
* companion diagnostics measure the factorized eigenfunction distance, the
  localization of eigenfunctions near x1 = 0, and the oscillating-integral
  averaging bound the convergence argument rests on.

``sweep`` runs the comparison over an eps list (one concurrent job per eps)
and can persist a schema-versioned JSON report plus per-metric CSV tables
with fixed column order, '.' decimals and LF line endings.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import eigen
from .cell import CellEigenpair, EffectiveModel, build_effective_model, principal_cell_eig
from .mesh_fem import (
    GAUSS_1D,
    MAX_ASPECT,
    CellGrid,
    DirichletMap,
    MeshError,
    RodGrid,
    apply_dirichlet,
    assemble_mass,
    assemble_stiffness,
    integrate_quad,
    quad_gradients,
    quad_values,
)
from .oscillator import OscillatorSpec, eigenfunction_w, nu_closed_form
from .problems import CoefficientProblem

SCHEMA_VERSION = 1
MIN_PER_PERIOD = 8
BASE_PER_PERIOD = 24
BASE_EPS = 0.125
SIGMA_SAFETY = 0.9  # shift hints sit 10% below the lambda_1 estimate
CLUSTER_GAP_REL = 1e-6
WINDOW_FACTORS = (1.0, 2.0, 4.0, 6.0)  # multiples of sqrt(eps)
FIXED_WINDOWS = (0.5, 1.0)


class FinescaleError(RuntimeError):
    """Stage-labeled failure in the rod pipeline."""


def admissible_eps(eps: float) -> bool:
    """True when eps is the reciprocal of an even integer in (0, 1/4].

    The rod then holds a whole number of coefficient periods, the condition
    RodGrid enforces; callers can pre-validate cheap and early.
    """
    if not (0.0 < eps <= 0.25):
        return False
    inv = 1.0 / eps
    return abs(inv - round(inv)) <= 1e-9 and round(inv) % 2 == 0


class UnderResolved(FinescaleError):
    """The requested mesh cannot resolve the coefficient period."""

    def __init__(self, message: str, required_m1: int):
        super().__init__(message)
        self.required_m1 = required_m1


@dataclass(frozen=True)
class ResolutionPolicy:
    """Mesh resolution as a function of eps.

    Elements per period grow like eps^(-1/2) from ``base_per_period`` at
    eps = 1/8, rounded up to even so the 2:1 coarse companion stays whole;
    the h^2 eigenvalue error then shrinks faster than the 1/eps
    amplification of the first-order comparison.  The transverse count keeps
    the element aspect ratio admissible; coefficients independent of y2 make
    the discrete eigenfunctions constant across the rod thickness, so the
    minimum transverse resolution is exact there and anything finer is
    wasted work.
    """

    base_per_period: int = BASE_PER_PERIOD
    per_period: int | None = None  # explicit override
    m2: int | None = None  # explicit transverse override

    def resolve(self, problem: CoefficientProblem, eps: float) -> tuple[int, int]:
        """(elements per period, transverse elements) for the fine mesh."""
        if self.per_period is not None:
            p = int(self.per_period)
        else:
            raw = self.base_per_period * math.sqrt(BASE_EPS / eps)
            p = max(2 * MIN_PER_PERIOD, 2 * math.ceil(raw / 2.0))
        if self.m2 is not None:
            m2 = int(self.m2)
        else:
            guard = max(4, math.ceil(p / MAX_ASPECT))
            m2 = max(guard, p) if problem.depends_on_y2 else guard
        return p, m2


@dataclass(frozen=True)
class RodPencil:
    """Dirichlet-reduced matrices of the rod problem at one eps.

    A is the energy matrix (SPD once the end columns are eliminated), B the
    sign-indefinite weighted mass, M the plain mass used by normalization
    and diagnostics; bc maps between reduced and full nodal vectors.
    """

    problem: CoefficientProblem
    eps: float
    grid: RodGrid
    A: sp.csr_array
    B: sp.csr_array
    M: sp.csr_array
    bc: DirichletMap

    @property
    def ndof(self) -> int:
        return self.A.shape[0]

    def node_x1(self) -> np.ndarray:
        """x1 coordinates of the free DOFs."""
        return self.bc.restrict(self.grid.node_coords()[0])


def assemble_rod(problem: CoefficientProblem, eps: float,
                 policy: ResolutionPolicy | None = None) -> RodPencil:
    """Assemble the Dirichlet-reduced rod pencil at the policy's resolution.

    Coefficients are sampled at the Gauss points of the exact periodic
    fast-coordinate map, so the matrices are bitwise invariant under
    translating a periodic coefficient by one period.  A policy that yields
    fewer than MIN_PER_PERIOD elements per period raises UnderResolved with
    the smallest admissible m1.
    """
    policy = policy or ResolutionPolicy()
    p, m2 = policy.resolve(problem, eps)
    periods = int(round(2.0 / eps)) if eps > 0 else 0
    if p < MIN_PER_PERIOD:
        raise UnderResolved(
            f"{p} elements per period under-resolve the coefficient;"
            f" need m1 >= {MIN_PER_PERIOD * periods}",
            required_m1=MIN_PER_PERIOD * periods,
        )
    grid = RodGrid(eps=eps, m1=p * periods, m2=m2)
    x1, _, y1, y2 = grid.quad_points()
    a11, a12, a22 = problem.a_values(x1, y1, y2)
    rho = problem.rho_values(x1, y1, y2)
    A_full = assemble_stiffness(grid, a11, a12, a22)
    B_full = assemble_mass(grid, rho)
    M_full = assemble_mass(grid, 1.0)
    A, bc = apply_dirichlet(A_full, grid.dirichlet_dofs)
    B, _ = apply_dirichlet(B_full, grid.dirichlet_dofs)
    M, _ = apply_dirichlet(M_full, grid.dirichlet_dofs)
    return RodPencil(problem=problem, eps=eps, grid=grid, A=A, B=B, M=M, bc=bc)


@dataclass(frozen=True)
class NormalizationRule:
    """Scale convention for rod eigenvectors.

    mode "scaled" matches the natural amplitude of the localized modes: the
    squared rod L2 norm equals eps^(1/2) * eps^(d-1) * |Q| with d = 2 and
    unit cross-section measure, i.e. eps^(3/2), so nodal values stay O(1)
    across the sweep.  mode "unit" is the plain unit-norm convention.
    """

    mode: str = "scaled"

    def __post_init__(self):
        if self.mode not in ("scaled", "unit"):
            raise ValueError(f"unknown normalization mode {self.mode!r}")

    def constant(self, eps: float) -> float:
        """Target value of u'Mu (positive for admissible eps)."""
        return eps**1.5 if self.mode == "scaled" else 1.0


@dataclass(frozen=True)
class SpectrumTable:
    """Positive-branch eigenvalues (ascending) with rule-normalized vectors."""

    eps: float
    values: np.ndarray
    vectors: np.ndarray  # column j, free DOFs, u'Mu = rule constant
    residuals: np.ndarray
    rule: NormalizationRule


def positive_spectrum(rod: RodPencil, k_count: int,
                      rule: NormalizationRule | None = None,
                      sigma_lambda: float | None = None) -> SpectrumTable:
    """The k_count smallest positive rod eigenvalues with normalized vectors.

    sigma_lambda is an optional a-priori lambda_1 estimate (from a coarser
    mesh or the effective model); with it the solver runs a targeted
    shift-inverted Lanczos, which on fine rods is far cheaper than the
    untargeted positive-branch extraction.  PartialSpectrum propagates when
    fewer positive eigenvalues exist.
    """
    rule = rule or NormalizationRule()
    res = eigen.positive_pencil_spectrum(rod.A, rod.B, k_count, sigma_lambda=sigma_lambda)
    vectors = res.vectors.copy()
    c = rule.constant(rod.eps)
    for j in range(vectors.shape[1]):
        q = float(vectors[:, j] @ (rod.M @ vectors[:, j]))
        vectors[:, j] *= math.sqrt(c / q)
    return SpectrumTable(eps=rod.eps, values=res.values.copy(), vectors=vectors,
                         residuals=res.residuals.copy(), rule=rule)


def negative_branch_exists(rod: RodPencil) -> bool:
    """Probe for the negative eigenvalue sequence with one Lanczos run.

    The reciprocal pencil B v = theta A v has its most negative theta at
    1/lambda_1 of the negative branch, well separated from the positive
    cluster near zero, so a single 'SA' extraction in the A-inner product
    settles existence.
    """
    fac = eigen.cholesky(rod.A)
    theta = eigen._eigsh(
        rod.B, k=1, M=rod.A, which="SA", Minv=fac.as_operator(),
        v0=eigen._start_vector(rod.ndof), return_eigenvectors=False,
        maxiter=5000, tol=1e-8,
    )
    return bool(theta[0] < 0.0)


def oscillator_spec(model: EffectiveModel) -> OscillatorSpec:
    """Oscillator parameters induced by an effective model."""
    return OscillatorSpec(a_eff=model.a_eff, c_eff=model.c_eff,
                          mu2=model.mu2, rho_avg=model.rho_psi_avg)


def predicted(model: EffectiveModel, spec: OscillatorSpec, eps: float, j: int) -> float:
    """Two-term asymptotic prediction mu(0)/eps^2 + nu_j/eps."""
    if eps <= 0.0:
        raise ValueError("eps must be positive")
    return model.mu0 / eps**2 + nu_closed_form(spec, j) / eps


def _psi_at_rod_nodes(pair: CellEigenpair, grid: RodGrid) -> np.ndarray:
    """Bilinear interpolation of a cell eigenfunction at the rod nodes' fast
    coordinates (periodic in y1, clamped at the lateral edges)."""
    cg = pair.grid
    table = np.asarray(pair.psi).reshape(cg.n2 + 1, cg.n1)
    y1, y2 = grid.node_fast_coords()
    t1 = y1 * cg.n1
    i1 = np.minimum(t1.astype(int), cg.n1 - 1)
    f1 = t1 - i1
    i1p = (i1 + 1) % cg.n1
    t2 = y2 * cg.n2
    i2 = np.minimum(t2.astype(int), cg.n2 - 1)
    f2 = t2 - i2
    lo = (1.0 - f1) * table[i2, i1] + f1 * table[i2, i1p]
    hi = (1.0 - f1) * table[i2 + 1, i1] + f1 * table[i2 + 1, i1p]
    return (1.0 - f2) * lo + f2 * hi


def _unit_profile(spec: OscillatorSpec, j: int, z: np.ndarray) -> np.ndarray:
    """Oscillator eigenfunction scaled to unit L2(R) norm."""
    norm2 = math.sqrt(math.pi) * 2.0 ** (j - 1) * math.factorial(j - 1) / spec.theta**0.25
    return eigenfunction_w(spec, j, z) / math.sqrt(norm2)


@dataclass(frozen=True)
class FactorizationFit:
    """Scaled eigenfunction-factorization distance and its fitted amplitude."""

    error: float  # eps^(-1/2) * min over c of the rod L2 distance
    scale: float  # the minimizing amplitude c


def factorization_error(rod: RodPencil, u: np.ndarray, model: EffectiveModel,
                        spec: OscillatorSpec, j: int,
                        psi0: CellEigenpair | None = None) -> FactorizationFit:
    """Distance of u to the factorized reference Psi(0, x/eps) v_j(x1/sqrt(eps)).

    The reference is built nodally (Psi bilinearly interpolated at the exact
    fast coordinates, v_j at unit L2 scale on the line) and compared in the
    rod's L2 inner product; the amplitude is fitted by least squares, which
    absorbs the scale mismatch between the two normalization conventions and
    aligns signs automatically.  u is expected at the "scaled" convention
    (squared norm eps^(3/2)); the distance carries the eps^(-1/2) prefactor
    of the asymptotic statement.
    """
    if psi0 is None:
        psi0 = principal_cell_eig(rod.problem, 0.0, CellGrid(*model.provenance["fine_grid"]))
    profile = _unit_profile(spec, j, rod.grid.node_coords()[0] / math.sqrt(rod.eps))
    reference = rod.bc.restrict(_psi_at_rod_nodes(psi0, rod.grid) * profile)
    uu = float(u @ (rod.M @ u))
    ur = float(u @ (rod.M @ reference))
    rr = float(reference @ (rod.M @ reference))
    err2 = max(uu - ur * ur / rr, 0.0)
    return FactorizationFit(error=math.sqrt(err2 / rod.eps), scale=ur / rr)


def localization_profile(rod: RodPencil, u: np.ndarray) -> tuple[tuple[float, float], ...]:
    """Mass fractions of u^2 on the windows |x1| <= W.

    W runs over {1, 2, 4, 6} sqrt(eps) followed by the fixed {0.5, 1}.  The
    fractions are cumulative sums of the |x1|-sorted quadrature masses, so
    they are nondecreasing in W even at roundoff level (per-window masked
    sums can disorder saturated fractions by an ulp) and the full-domain
    entry is exactly 1.
    """
    x1q = rod.grid.quad_points()[0]
    uq = quad_values(rod.grid, rod.bc.extend(u))
    mass = (uq * uq).ravel()  # the constant quadrature weight cancels in the ratio
    radius = np.abs(x1q).ravel()
    order = np.argsort(radius, kind="stable")
    cum = np.cumsum(mass[order])
    radius_sorted = radius[order]
    total = float(cum[-1])
    windows = [f * math.sqrt(rod.eps) for f in WINDOW_FACTORS] + list(FIXED_WINDOWS)
    out = []
    for W in windows:
        idx = int(np.searchsorted(radius_sorted, W, side="right"))
        out.append((W, float(cum[idx - 1]) / total if idx else 0.0))
    return tuple(out)


def _weight_cell_averages(problem: CoefficientProblem, x1: np.ndarray) -> np.ndarray:
    """Cell average of rho at each x1 by composite 2x2 Gauss quadrature.

    Equal weights summing to one exactly (a power of two per direction) make
    the average of a constant weight exact; 64 cells per direction put the
    quadrature error far below every other term of the diagnostic.
    """
    cells = 64
    pts = np.concatenate([(np.arange(cells) + d) / cells for d in GAUSS_1D])
    if problem.depends_on_y2:
        g1, g2 = np.meshgrid(pts, pts, indexing="ij")
        y1, y2 = g1.ravel(), g2.ravel()
    else:
        y1, y2 = pts, np.zeros_like(pts)
    out = np.empty(x1.size)
    step = max(1, 4_000_000 // y1.size)
    for start in range(0, x1.size, step):
        stop = min(start + step, x1.size)
        vals = problem.rho_values(x1[start:stop, None], y1[None, :], y2[None, :])
        out[start:stop] = vals.mean(axis=1)
    return out


def averaging_diagnostic(rod: RodPencil, u: np.ndarray) -> float:
    """Normalized two-scale averaging defect of the weight against u^2.

    Computes the difference between the rho(x1, x/eps)-weighted and the
    cell-averaged-rho-weighted integrals of u^2, divided by
    eps ||u|| ||grad u||.  Boundedness of this ratio as eps shrinks is the
    oscillating-integral estimate behind the convergence proof; a constant
    weight gives an exactly zero defect.
    """
    grid = rod.grid
    x1, _, y1, y2 = grid.quad_points()
    rho = rod.problem.rho_values(x1, y1, y2)
    uniq, inverse = np.unique(x1.ravel(), return_inverse=True)
    rho_bar = _weight_cell_averages(rod.problem, uniq)[inverse].reshape(x1.shape)
    full = rod.bc.extend(u)
    uq = quad_values(grid, full)
    defect = integrate_quad(grid, (rho - rho_bar) * uq * uq)
    gx, gy = quad_gradients(grid, full)
    norm_u = math.sqrt(integrate_quad(grid, uq * uq))
    norm_g = math.sqrt(integrate_quad(grid, gx * gx + gy * gy))
    return defect / (rod.eps * norm_u * norm_g)


@dataclass(frozen=True)
class EpsSolve:
    """One eps worth of rod solves: the mesh pair and extrapolated values."""

    rod: RodPencil
    rod_coarse: RodPencil
    table: SpectrumTable
    table_coarse: SpectrumTable
    lambdas: np.ndarray  # (4 fine - coarse) / 3


def solve_eps(problem: CoefficientProblem, eps: float, k_count: int,
              policy: ResolutionPolicy | None = None,
              rule: NormalizationRule | None = None,
              sigma_hint: float | None = None) -> EpsSolve:
    """Solve the rod at eps on the policy mesh and its 2:1 coarsening.

    The coarse eigenvalues seed the fine solve's spectral shift; sigma_hint
    (for example the model prediction of lambda_1) seeds the coarse solve.
    Eigenvalues are h^2-extrapolated pairwise; vectors come from the fine
    mesh.
    """
    policy = policy or ResolutionPolicy()
    rule = rule or NormalizationRule()
    p, m2 = policy.resolve(problem, eps)
    m2_coarse = max(4, m2 // 2) if problem.depends_on_y2 else m2
    rod_coarse = assemble_rod(problem, eps, replace(policy, per_period=p // 2, m2=m2_coarse))
    table_coarse = positive_spectrum(rod_coarse, k_count, rule, sigma_lambda=sigma_hint)
    rod = assemble_rod(problem, eps, replace(policy, per_period=p, m2=m2))
    table = positive_spectrum(rod, k_count, rule,
                              sigma_lambda=SIGMA_SAFETY * float(table_coarse.values[0]))
    lam = (4.0 * table.values - table_coarse.values) / 3.0
    return EpsSolve(rod=rod, rod_coarse=rod_coarse, table=table,
                    table_coarse=table_coarse, lambdas=lam)


def _cluster_groups(values: np.ndarray, rel: float = CLUSTER_GAP_REL) -> tuple[tuple[int, ...], ...]:
    """1-based index groups of near-degenerate eigenvalues (gap < rel * lambda)."""
    groups = [[1]]
    for j in range(1, len(values)):
        if values[j] - values[j - 1] < rel * abs(values[j]):
            groups[-1].append(j + 1)
        else:
            groups.append([j + 1])
    return tuple(tuple(g) for g in groups)


@dataclass(frozen=True)
class EpsRow:
    """Per-eps slice of the convergence report (tuples indexed by j - 1)."""

    eps: float
    m1: int
    m2: int
    dof: int
    lambdas: tuple[float, ...]
    lambdas_fine: tuple[float, ...]
    lambdas_coarse: tuple[float, ...]
    predicted: tuple[float, ...]
    err_leading: tuple[float, ...]  # eps^2 lambda - mu(0)
    err_first: tuple[float, ...]  # eps (lambda - mu(0)/eps^2) - nu_j
    factorization: tuple[FactorizationFit, ...] | None
    localization: tuple[tuple[tuple[float, float], ...], ...]
    averaging: float
    clusters: tuple[tuple[int, ...], ...]
    residual_max: float

    def to_dict(self) -> dict:
        return {
            "eps": self.eps,
            "m1": self.m1,
            "m2": self.m2,
            "dof": self.dof,
            "lambda": list(self.lambdas),
            "lambda_fine": list(self.lambdas_fine),
            "lambda_coarse": list(self.lambdas_coarse),
            "predicted": list(self.predicted),
            "err_leading": list(self.err_leading),
            "err_first": list(self.err_first),
            "factorization": None if self.factorization is None
            else [{"error": f.error, "scale": f.scale} for f in self.factorization],
            "localization": [[[w, frac] for w, frac in prof] for prof in self.localization],
            "averaging": self.averaging,
            "clusters": [list(g) for g in self.clusters],
            "residual_max": self.residual_max,
        }


@dataclass(frozen=True)
class ConvergenceReport:
    """Sweep outcome: the model, its predictions, per-eps observations."""

    problem: str
    j_max: int
    model: EffectiveModel
    nu: tuple[float, ...]
    rule: NormalizationRule
    rows: tuple[EpsRow, ...]
    footnotes: tuple[str, ...] = ()

    def __post_init__(self):
        e = self.eps
        if any(b >= a for a, b in zip(e, e[1:])):
            raise FinescaleError("eps values must be strictly decreasing")
        for row in self.rows:
            cols = list(row.lambdas) + list(row.predicted) + list(row.err_first) + [row.averaging]
            if row.factorization is not None:
                cols += [f.error for f in row.factorization]
            if not np.all(np.isfinite(cols)):
                raise FinescaleError(f"non-finite report column at eps={row.eps}")

    @property
    def eps(self) -> tuple[float, ...]:
        return tuple(r.eps for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "problem": self.problem,
            "j_max": self.j_max,
            "normalization": {"mode": self.rule.mode},
            "model": self.model.to_dict(),
            "nu": list(self.nu),
            "eps": list(self.eps),
            "rows": [r.to_dict() for r in self.rows],
            "footnotes": list(self.footnotes),
        }


def _eps_row(problem, model, spec, nus, psi0, eps, j_max, policy, rule) -> EpsRow:
    stage = "rod solve"
    try:
        hint = SIGMA_SAFETY * (model.mu0 / eps**2 + nus[0] / eps)
        sol = solve_eps(problem, eps, j_max + 1, policy=policy, rule=rule, sigma_hint=hint)
        stage = "diagnostics"
        lam = sol.lambdas[:j_max]
        if problem.a_is_scalar:
            fact = tuple(
                factorization_error(sol.rod, sol.table.vectors[:, j], model, spec, j + 1, psi0=psi0)
                for j in range(j_max)
            )
        else:
            fact = None
        loc = tuple(localization_profile(sol.rod, sol.table.vectors[:, j]) for j in range(j_max))
        avg = averaging_diagnostic(sol.rod, sol.table.vectors[:, 0])
        return EpsRow(
            eps=eps,
            m1=sol.rod.grid.m1,
            m2=sol.rod.grid.m2,
            dof=sol.rod.ndof,
            lambdas=tuple(float(v) for v in lam),
            lambdas_fine=tuple(float(v) for v in sol.table.values[:j_max]),
            lambdas_coarse=tuple(float(v) for v in sol.table_coarse.values[:j_max]),
            predicted=tuple(model.mu0 / eps**2 + nu / eps for nu in nus),
            err_leading=tuple(eps**2 * float(v) - model.mu0 for v in lam),
            err_first=tuple(eps * (float(v) - model.mu0 / eps**2) - nu for v, nu in zip(lam, nus)),
            factorization=fact,
            localization=loc,
            averaging=float(avg),
            clusters=_cluster_groups(sol.lambdas),
            residual_max=float(max(sol.table.residuals.max(), sol.table_coarse.residuals.max())),
        )
    except FinescaleError:
        raise
    except (eigen.EigenError, MeshError) as exc:
        raise FinescaleError(f"eps={eps}: {stage} failed: {exc}") from exc


def worker_count() -> int:
    """Worker pool size: THINSPEC_WORKERS override, else logical cores."""
    env = os.environ.get("THINSPEC_WORKERS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("THINSPEC_WORKERS must be a positive integer")
        return n
    return os.cpu_count() or 1


def sweep(problem: CoefficientProblem, eps_list, j_max: int = 2,
          model: EffectiveModel | None = None,
          policy: ResolutionPolicy | None = None,
          rule: NormalizationRule | None = None,
          out_dir=None, workers: int | None = None) -> ConvergenceReport:
    """Verify the two-term asymptotics over an eps list.

    Builds (or reuses) the effective model, solves every eps on a mesh pair
    concurrently, and joins the rows in decreasing eps order, so output is
    deterministic for a fixed configuration.  Hypothesis violations surface
    during the model build, before any rod is assembled.  With out_dir the
    report is persisted as report.json plus tables/*.csv.
    """
    eps_values = sorted({float(e) for e in eps_list}, reverse=True)
    if not eps_values:
        raise ValueError("eps list is empty")
    if j_max < 1:
        raise ValueError("j_max must be at least 1")
    policy = policy or ResolutionPolicy()
    rule = rule or NormalizationRule()
    if model is None:
        model = build_effective_model(problem)
    spec = oscillator_spec(model)
    nus = tuple(nu_closed_form(spec, j) for j in range(1, j_max + 1))
    psi0 = principal_cell_eig(problem, 0.0, CellGrid(*model.provenance["fine_grid"]))
    footnotes = []
    if not problem.a_is_scalar:
        footnotes.append(
            "factorization-error columns omitted: the reference product requires"
            " the scalar-coefficient cancellation behind the factorized form"
        )

    def job(eps: float) -> EpsRow:
        return _eps_row(problem, model, spec, nus, psi0, eps, j_max, policy, rule)

    n_workers = workers if workers is not None else worker_count()
    if n_workers == 1 or len(eps_values) == 1:
        rows = [job(e) for e in eps_values]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(job, e) for e in eps_values]
            rows = [f.result() for f in futures]
    report = ConvergenceReport(problem=problem.name, j_max=j_max, model=model, nu=nus,
                               rule=rule, rows=tuple(rows), footnotes=tuple(footnotes))
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def _fmt(x) -> str:
    return repr(float(x))


def write_report(report: ConvergenceReport, out_dir) -> list[Path]:
    """Persist report.json and the per-metric CSV tables; returns the paths.

    Byte-for-byte deterministic for identical configurations: fixed column
    order, shortest round-trip floats with '.' decimals, LF endings, no
    timestamps.
    """
    out = Path(out_dir)
    tables = out / "tables"
    tables.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json"]
    with open(paths[0], "w", newline="\n") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")

    def emit(name: str, header: tuple[str, ...], rows) -> None:
        path = tables / name
        paths.append(path)
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")

    eig_rows, err_rows, fact_rows, loc_rows, avg_rows = [], [], [], [], []
    for r in report.rows:
        avg_rows.append((_fmt(r.eps), _fmt(r.averaging)))
        for j in range(report.j_max):
            clustered = any(j + 1 in g for g in r.clusters if len(g) > 1)
            eig_rows.append((_fmt(r.eps), str(j + 1), _fmt(r.lambdas[j]),
                             _fmt(r.lambdas_fine[j]), _fmt(r.lambdas_coarse[j]),
                             _fmt(r.predicted[j]), "1" if clustered else "0"))
            err_rows.append((_fmt(r.eps), str(j + 1), _fmt(r.err_leading[j]),
                             _fmt(r.err_first[j])))
            if r.factorization is not None:
                fit = r.factorization[j]
                fact_rows.append((_fmt(r.eps), str(j + 1), _fmt(fit.error), _fmt(fit.scale)))
            for W, frac in r.localization[j]:
                loc_rows.append((_fmt(r.eps), str(j + 1), _fmt(W), _fmt(frac)))
    emit("eigenvalues.csv",
         ("eps", "j", "lambda", "lambda_fine", "lambda_coarse", "predicted", "clustered"),
         eig_rows)
    emit("errors.csv", ("eps", "j", "err_leading", "err_first"), err_rows)
    emit("factorization.csv", ("eps", "j", "error", "scale"), fact_rows)
    emit("localization.csv", ("eps", "j", "window", "fraction"), loc_rows)
    emit("averaging.csv", ("eps", "ratio"), avg_rows)
    return paths
