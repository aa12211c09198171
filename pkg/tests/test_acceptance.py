"""Desk-scale acceptance gates for the assembled pipeline.

One test per gate, numbered; `pytest tests/test_acceptance.py -v` prints one
pass/fail line for each.  The gates check the solver stack bottom-up: cell
eigenvalue correctness against dense linear algebra, rejection of weights
without a positive principal eigenvalue, eigenfunction positivity, the
eigenvalue-derivative formula, corrector analytics with known closed forms,
the structure of the weighted effective matrix, the oscillator closed form,
and the thin-rod sweep trends (two-term eigenvalue asymptotics, localization,
factorization decay, averaging boundedness) plus dense-oracle equivalence for
every small pencil the suite touches.
"""

import time

import numpy as np
import pytest
import scipy.linalg
from scipy.optimize import brentq

from thinspec import eigen, finescale
from thinspec.cell import (build_cell_pencil, corrector_case1, corrector_weighted,
                           mu_prime, principal_cell_eig)
from thinspec.mesh_fem import CellGrid
from thinspec.oscillator import OscillatorSpec, nu_closed_form, solve_truncated
from thinspec.problems import CoefficientProblem, builtin_problem

P_CONST = builtin_problem("p_const")
P_LOC = builtin_problem("p_loc")
SWEEP_EPS = (1 / 8, 1 / 16, 1 / 32, 1 / 64)


def _dense_alpha(Ad, Bd, Md, mu):
    # smallest eigenvalue of A - mu B in the M inner product, dense solve
    return float(scipy.linalg.eigh(Ad - mu * Bd, Md, eigvals_only=True,
                                   subset_by_index=(0, 0))[0])


def _dense_mu_root(A, B, M, lo, hi):
    """Positive root of the dense alpha(mu) sweep, bracketed in [lo, hi]."""
    Ad, Bd, Md = A.toarray(), B.toarray(), M.toarray()
    return brentq(lambda m: _dense_alpha(Ad, Bd, Md, m), lo, hi, rtol=1e-12)


@pytest.fixture(scope="module")
def sweep_report(p_loc_model):
    """The four-eps convergence sweep of the localized problem, with timing."""
    t0 = time.monotonic()
    report = finescale.sweep(P_LOC, SWEEP_EPS, j_max=2, model=p_loc_model)
    return report, time.monotonic() - t0


def test_01_principal_cell_eigenvalue_matches_dense_sweep_root():
    t0 = time.monotonic()
    grid = CellGrid(24, 24)
    mu_sparse = principal_cell_eig(P_CONST, 0.0, grid).mu
    A, B, M = build_cell_pencil(P_CONST, 0.0, grid)
    # bracket found independently of the sparse answer
    Ad, Bd, Md = A.toarray(), B.toarray(), M.toarray()
    lo = 1.0
    while _dense_alpha(Ad, Bd, Md, lo) <= 0.0:
        lo /= 2.0
    hi = max(2.0 * lo, 2.0)
    while _dense_alpha(Ad, Bd, Md, hi) >= 0.0:
        hi *= 2.0
    mu_dense = brentq(lambda m: _dense_alpha(Ad, Bd, Md, m), lo, hi, rtol=1e-12)
    assert abs(mu_sparse - mu_dense) / mu_dense <= 1e-8
    assert time.monotonic() - t0 < 10.0


def test_02_nonnegative_average_weight_is_rejected():
    grid = CellGrid(16, 8)
    for rho in ("cos(2*pi*y1) + 0.5", "cos(2*pi*y1) + 0.01", "sin(2*pi*y1) + 1"):
        p = CoefficientProblem.from_sources("nonneg-average", a="1", rho=rho)
        with pytest.raises(eigen.NoPositivePrincipal):
            principal_cell_eig(p, 0.0, grid)


def test_03_principal_eigenfunctions_are_strictly_positive():
    grids = (CellGrid(24, 24), CellGrid(32, 4), CellGrid(64, 8), CellGrid(128, 8))
    samples = [(p, g, 0.0) for p in (P_CONST, P_LOC) for g in grids]
    samples += [(P_LOC, CellGrid(64, 8), 0.35), (P_LOC, CellGrid(64, 8), -0.6)]
    for p, g, x1 in samples:
        pair = principal_cell_eig(p, x1, g)
        low = float(np.min(pair.psi))
        assert low > 0.0, f"{p.name} {g.n1}x{g.n2} x1={x1}: min psi = {low}"


def test_04_eigenvalue_derivative_formula_matches_finite_differences():
    grid = CellGrid(32, 4)
    h = 1e-3
    points = (0.15, 0.3, 0.45, 0.6, 0.75, -0.15, -0.3, -0.45, -0.6, -0.75)
    for x1 in points:
        formula = mu_prime(P_LOC, x1, grid)
        fd = (principal_cell_eig(P_LOC, x1 + h, grid).mu
              - principal_cell_eig(P_LOC, x1 - h, grid).mu) / (2 * h)
        assert abs(formula - fd) / abs(fd) <= 1e-3, f"x1={x1}"


def test_05_axial_corrector_analytics():
    rho = "cos(2*pi*y1) - 0.5"
    # axial layers: effective value is the harmonic mean sqrt(2^2 - 1)
    layered = CoefficientProblem.from_sources("layered", a="2 + cos(2*pi*y1)", rho=rho)
    _, a_eff = corrector_case1(layered, 0.0, CellGrid(128, 8))
    assert a_eff == pytest.approx(np.sqrt(3.0), rel=1e-5)
    # transverse layers: corrector vanishes, arithmetic mean survives
    transverse = CoefficientProblem.from_sources("transverse", a="2 + cos(2*pi*y2)", rho=rho)
    _, a_eff = corrector_case1(transverse, 0.0, CellGrid(8, 32))
    assert a_eff == pytest.approx(2.0, abs=1e-6)
    # constant coefficient: corrector is identically zero
    flat = CoefficientProblem.from_sources("flat", a="3", rho=rho)
    fld, a_eff = corrector_case1(flat, 0.0, CellGrid(16, 8))
    assert np.max(np.abs(fld.values)) <= 1e-12
    assert a_eff == pytest.approx(3.0, abs=1e-12)


def test_06_weighted_effective_matrix_is_diagonal_with_positive_axial_entry():
    grid = CellGrid(64, 8)
    for p in (P_CONST, P_LOC):
        pair = principal_cell_eig(p, 0.0, grid)
        _, A_energy, A_defining = corrector_weighted(p, grid, pair)
        assert abs(A_energy[1, 0]) <= 1e-8, p.name
        assert abs(A_defining[1, 0]) <= 1e-8, p.name
        assert A_energy[0, 0] > 0.0, p.name


def test_07_oscillator_solver_reproduces_closed_form():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    specs = [OscillatorSpec(a_eff=1.0, c_eff=0.0, mu2=2.0, rho_avg=1.0)]  # nu_j = 2j - 1
    specs += [OscillatorSpec(a_eff=float(rng.uniform(0.3, 3.0)),
                             c_eff=float(rng.uniform(-2.0, 2.0)),
                             mu2=float(rng.uniform(0.5, 10.0)), rho_avg=1.0)
              for _ in range(5)]
    for s in specs:
        nus = solve_truncated(s, k_count=4).nus
        closed = np.array([nu_closed_form(s, j) for j in range(1, 5)])
        np.testing.assert_allclose(nus, closed, rtol=1e-6)
    np.testing.assert_allclose(
        [nu_closed_form(specs[0], j) for j in range(1, 5)], [1.0, 3.0, 5.0, 7.0], rtol=1e-15)
    assert time.monotonic() - t0 < 5.0


def test_08_two_term_eigenvalue_asymptotics_trend(sweep_report, p_loc_model):
    report, elapsed = sweep_report
    rows = report.rows
    assert [r.eps for r in rows] == sorted(SWEEP_EPS, reverse=True)
    # (a) scaled leading error decreases strictly; final relative gap <= 5%
    leading = [abs(r.err_leading[0]) for r in rows]
    assert all(a > b for a, b in zip(leading, leading[1:])), leading
    assert leading[-1] / p_loc_model.mu0 <= 0.05
    # (b) first-order correction error decreases strictly
    first = [abs(r.err_first[0]) for r in rows]
    assert all(a > b for a, b in zip(first, first[1:])), first
    assert elapsed <= 600.0


def test_09_first_eigenfunction_localizes(sweep_report):
    report, _ = sweep_report
    row = report.rows[-1]
    assert row.eps == pytest.approx(1 / 64)
    profile = sorted(row.localization[0])  # (window, fraction), ascending window
    six_sqrt = 6.0 * np.sqrt(row.eps)
    frac_six = next(f for w, f in profile if w == pytest.approx(six_sqrt))
    assert frac_six >= 0.95
    fractions = [f for _, f in profile]
    assert all(a <= b for a, b in zip(fractions, fractions[1:])), fractions
    assert fractions[0] < fractions[-1] == 1.0


def test_10_factorization_error_decays(sweep_report):
    report, _ = sweep_report
    errors = [r.factorization[0].error for r in report.rows]
    assert all(a > b for a, b in zip(errors, errors[1:])), errors


def test_11_small_pencils_match_dense_oracle(pencil_registry):
    for label, problem, grid, x1 in pencil_registry["cells"]:
        pair = principal_cell_eig(problem, x1, grid)
        A, B, M = build_cell_pencil(problem, x1, grid)
        mu_dense = _dense_mu_root(A, B, M, 0.9 * pair.mu, 1.1 * pair.mu)
        assert abs(pair.mu - mu_dense) / mu_dense <= 1e-8, label
    for label, rod in pencil_registry["rods"]:
        table = finescale.positive_spectrum(rod, k_count=3)
        w, _ = eigen.dense_oracle(rod.B, rod.A)
        lam_dense = np.sort(1.0 / w[w > 0.0])[:3]
        rel = float(np.max(np.abs(np.asarray(table.values) - lam_dense) / lam_dense))
        assert rel <= 1e-8, f"{label}: rel={rel}"


def test_12_averaging_ratio_stays_bounded(sweep_report):
    report, _ = sweep_report
    ratios = [r.averaging for r in report.rows]
    base = abs(ratios[0])
    assert base > 0.0
    assert all(abs(r) <= 10.0 * base for r in ratios), ratios
