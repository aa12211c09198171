"""Sparse eigensolvers against analytic spectra and dense references."""

import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from thinspec import eigen, mesh_fem, problems
from thinspec.eigen import (
    EigResult,
    NoPositivePrincipal,
    NotSPD,
    PartialSpectrum,
    SizeExceeded,
    Unbracketable,
    alpha1,
    cholesky,
    dense_oracle,
    gershgorin_lower,
    positive_pencil_spectrum,
    principal_positive,
    smallest_eigs,
)


def dirichlet_chain(n):
    """Second-difference matrix; eigenvalues 4 sin^2(k pi / (2(n+1)))."""
    return sp.csr_array(sp.diags_array([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                                       offsets=[-1, 0, 1]))


def chain_eigenvalues(n, k):
    j = np.arange(1, k + 1)
    return 4.0 * np.sin(j * np.pi / (2 * (n + 1))) ** 2


def cell_pencil(n, problem=problems.P_CONST, x1=0.0):
    g = mesh_fem.CellGrid(n, n)
    y1, y2 = g.quad_points()
    a11, a12, a22 = problem.a_values(x1, y1, y2)
    K = mesh_fem.assemble_stiffness(g, a11, a12, a22)
    B = mesh_fem.assemble_mass(g, problem.rho_values(x1, y1, y2))
    M = mesh_fem.assemble_mass(g)
    return K, B, M


class TestCholesky:
    def test_spd_accepted_and_solves(self):
        S = sp.csr_array(np.array([[4.0, 1.0], [1.0, 3.0]]))
        fac = cholesky(S)
        x = fac.solve(np.array([5.0, 4.0]))
        np.testing.assert_allclose(S @ x, [5.0, 4.0], rtol=1e-14)

    def test_indefinite_rejected(self):
        S = sp.csr_array(np.array([[1.0, 2.0], [2.0, 1.0]]))  # eigenvalues 3, -1
        with pytest.raises(NotSPD):
            cholesky(S)

    def test_negative_definite_rejected(self):
        with pytest.raises(NotSPD):
            cholesky(sp.csr_array(-np.eye(3)))

    def test_singular_psd_rejected(self):
        g = mesh_fem.CellGrid(6, 6)
        K = mesh_fem.assemble_stiffness(g, 1.0, 0.0, 1.0)  # constant nullspace
        with pytest.raises(NotSPD):
            cholesky(K)


def test_gershgorin_hand_values():
    S = sp.csr_array(np.array([[2.0, -1.0], [-1.0, 3.0]]))
    assert gershgorin_lower(S) == pytest.approx(1.0)
    S = sp.csr_array(np.array([[-2.0, 1.0], [1.0, 0.0]]))
    assert gershgorin_lower(S) == pytest.approx(-3.0)


class TestSmallestEigs:
    def test_chain_n5_analytic(self):
        n = 5
        res = smallest_eigs(dirichlet_chain(n), sp.csr_array(sp.eye_array(n)), 3)
        np.testing.assert_allclose(res.values, chain_eigenvalues(n, 3), rtol=1e-12)

    def test_chain_n200_sparse_path(self):
        n = 200
        res = smallest_eigs(dirichlet_chain(n), sp.csr_array(sp.eye_array(n)), 5)
        np.testing.assert_allclose(res.values, chain_eigenvalues(n, 5), rtol=1e-10)

    def test_diagonal_pencil(self):
        A = sp.csr_array(sp.diags_array(np.arange(1.0, 6.0)))
        M = sp.csr_array(sp.eye_array(5))
        res = smallest_eigs(A, M, 3)
        np.testing.assert_allclose(res.values, [1.0, 2.0, 3.0], rtol=1e-12)

    def test_matches_dense_oracle_on_cell_pencil(self):
        K, B, M = cell_pencil(10)
        S = (K - 3.0 * B).tocsr()
        res = smallest_eigs(S, M, 4)
        w, _ = dense_oracle(S, M)
        np.testing.assert_allclose(res.values, w[:4], rtol=1e-9, atol=1e-9)

    def test_indefinite_matrix_needs_shift_doubling(self):
        K, _, M = cell_pencil(12)
        S = (K - 50.0 * M).tocsr()  # eigenvalues start near -50
        res = smallest_eigs(S, M, 2)
        w, _ = dense_oracle(S, M)
        np.testing.assert_allclose(res.values, w[:2], rtol=1e-9)

    def test_vectors_m_orthonormal_and_sign_fixed(self):
        K, _, M = cell_pencil(12)
        res = smallest_eigs(K, M, 3)
        G = res.vectors.T @ (M @ res.vectors)
        assert np.max(np.abs(G - np.eye(3))) < 1e-10
        assert float(np.sum(M @ res.vectors[:, 0])) > 0

    def test_deterministic_across_runs(self):
        K, B, M = cell_pencil(12)
        S = (K - 3.0 * B).tocsr()
        r1 = smallest_eigs(S, M, 3)
        r2 = smallest_eigs(S, M, 3)
        assert np.array_equal(r1.values, r2.values)
        assert np.array_equal(r1.vectors, r2.vectors)

    def test_bad_k_rejected(self):
        A = sp.csr_array(np.eye(4))
        with pytest.raises(ValueError):
            smallest_eigs(A, A, 0)
        with pytest.raises(ValueError):
            smallest_eigs(A, A, 5)


class TestAlpha1:
    def test_zero_at_mu_zero(self):
        K, B, M = cell_pencil(10)
        a0, psi = alpha1(K, B, M, 0.0)
        assert abs(a0) < 1e-9
        assert abs(psi @ (M @ psi) - 1.0) < 1e-10

    def test_negative_mu_rejected(self):
        K, B, M = cell_pencil(6)
        with pytest.raises(ValueError):
            alpha1(K, B, M, -1.0)

    def test_concavity_on_a_grid(self):
        K, B, M = cell_pencil(8)
        mus = np.linspace(0.0, 120.0, 9)
        vals = [alpha1(K, B, M, m)[0] for m in mus]
        for i in range(1, len(mus) - 1):
            mid = 0.5 * (vals[i - 1] + vals[i + 1])
            assert vals[i] >= mid - 1e-9 * (1 + abs(vals[i]))

    def test_analytic_slope_matches_finite_difference(self):
        K, B, M = cell_pencil(10)
        mu = 5.0
        a, psi = alpha1(K, B, M, mu)
        slope = -float(psi @ (B @ psi))
        d = 1e-3
        fd = (alpha1(K, B, M, mu + d)[0] - alpha1(K, B, M, mu - d)[0]) / (2 * d)
        assert slope == pytest.approx(fd, rel=1e-5)


class TestPrincipalPositive:
    def test_matches_dense_root_small_grid(self):
        K, B, M = cell_pencil(12)
        pair = principal_positive(K, B, M)
        Kd, Bd, Md = K.toarray(), B.toarray(), M.toarray()

        def alpha_dense(mu):
            return scipy.linalg.eigh(Kd - mu * Bd, Md, subset_by_index=[0, 0],
                                     eigvals_only=True)[0]

        from scipy.optimize import brentq
        mu_ref = brentq(alpha_dense, 0.5 * pair.mu, 2.0 * pair.mu, xtol=1e-12, rtol=1e-14)
        assert pair.mu == pytest.approx(mu_ref, rel=1e-9)

    def test_eigenvector_structure(self):
        K, B, M = cell_pencil(12)
        pair = principal_positive(K, B, M)
        assert float(np.min(pair.psi)) > 0  # principal pair never changes sign
        assert pair.psi @ (B @ pair.psi) == pytest.approx(1.0, rel=1e-10)
        r = K @ pair.psi - pair.mu * (B @ pair.psi)
        assert np.linalg.norm(r) < 1e-7 * pair.mu

    def test_deterministic(self):
        K, B, M = cell_pencil(10)
        p1 = principal_positive(K, B, M)
        p2 = principal_positive(K, B, M)
        assert p1.mu == p2.mu

    def test_nonnegative_average_raises(self):
        p = problems.CoefficientProblem.from_sources(
            "bad", rho="cos(2*pi*y1) + 0.5", a="1")
        K, B, M = cell_pencil(10, problem=p)
        with pytest.raises(NoPositivePrincipal):
            principal_positive(K, B, M)

    def test_nonpositive_weight_is_unbracketable(self):
        # weight <= 0 everywhere: alpha1 increases with mu and never crosses
        g = mesh_fem.CellGrid(8, 8)
        K = mesh_fem.assemble_stiffness(g, 1.0, 0.0, 1.0)
        y1, _ = g.quad_points()
        B = mesh_fem.assemble_mass(g, -1.5 + np.cos(2 * np.pi * y1))
        M = mesh_fem.assemble_mass(g)
        with pytest.raises(Unbracketable):
            principal_positive(K, B, M)

    def test_scaling_covariance(self):
        # doubling the weight halves the principal eigenvalue
        K, B, M = cell_pencil(10)
        mu1 = principal_positive(K, B, M).mu
        mu2 = principal_positive(K, (2.0 * B).tocsr(), M).mu
        assert mu2 == pytest.approx(0.5 * mu1, rel=1e-8)


class TestPositivePencilSpectrum:
    def test_two_by_two_diagonal(self):
        A = sp.csr_array(np.eye(2))
        B = sp.csr_array(np.diag([2.0, 1.0]))
        res = positive_pencil_spectrum(A, B, 2)
        np.testing.assert_allclose(res.values, [0.5, 1.0], rtol=1e-14)

    def test_partial_spectrum_reports_found(self):
        A = sp.csr_array(np.eye(2))
        B = sp.csr_array(np.diag([1.0, -1.0]))
        res = positive_pencil_spectrum(A, B, 1)
        np.testing.assert_allclose(res.values, [1.0], rtol=1e-14)
        with pytest.raises(PartialSpectrum) as err:
            positive_pencil_spectrum(A, B, 2)
        np.testing.assert_allclose(err.value.found, [1.0])

    def test_sparse_matches_dense_sign_changing_weight(self):
        n = 200
        A = dirichlet_chain(n)
        d = np.cos(2 * np.pi * np.arange(n) / n) - 0.2
        B = sp.csr_array(sp.diags_array(d))
        res = positive_pencil_spectrum(A, B, 4)
        th = scipy.linalg.eigh(B.toarray(), A.toarray(), eigvals_only=True)
        lam_ref = np.sort(1.0 / th[th > 0])[:4]
        np.testing.assert_allclose(res.values, lam_ref, rtol=1e-10)

    def test_shifted_mode_agrees_with_standard(self):
        n = 200
        A = dirichlet_chain(n)
        d = np.cos(2 * np.pi * np.arange(n) / n) - 0.2
        B = sp.csr_array(sp.diags_array(d))
        std = positive_pencil_spectrum(A, B, 3)
        sh = positive_pencil_spectrum(A, B, 3, sigma_lambda=std.values[0] * 0.9)
        np.testing.assert_allclose(sh.values, std.values, rtol=1e-10)

    def test_vectors_a_orthonormal(self):
        n = 150
        A = dirichlet_chain(n)
        d = np.cos(2 * np.pi * np.arange(n) / n) - 0.2
        B = sp.csr_array(sp.diags_array(d))
        res = positive_pencil_spectrum(A, B, 3)
        G = res.vectors.T @ (A @ res.vectors)
        assert np.max(np.abs(G - np.eye(3))) < 1e-10

    def test_requires_spd_a(self):
        g = mesh_fem.CellGrid(6, 6)
        K = mesh_fem.assemble_stiffness(g, 1.0, 0.0, 1.0)  # singular
        B = mesh_fem.assemble_mass(g)
        with pytest.raises(NotSPD):
            positive_pencil_spectrum(K, B, 1)


class TestDenseOracle:
    def test_identity_mass_default(self):
        w, V = dense_oracle(dirichlet_chain(6))
        np.testing.assert_allclose(w, chain_eigenvalues(6, 6), rtol=1e-12)

    def test_size_cap(self):
        with pytest.raises(SizeExceeded):
            dense_oracle(sp.csr_array(sp.eye_array(3001)))


@given(st.lists(st.floats(min_value=-100.0, max_value=100.0,
                          allow_nan=False), min_size=3, max_size=12, unique=True))
@settings(max_examples=30, deadline=None)
def test_smallest_eigs_orders_diagonal_spectra(diag):
    A = sp.csr_array(sp.diags_array(np.array(diag)))
    M = sp.csr_array(sp.eye_array(len(diag)))
    res = smallest_eigs(A, M, min(3, len(diag)))
    np.testing.assert_allclose(res.values, np.sort(diag)[: len(res.values)],
                               rtol=1e-12, atol=1e-12)
