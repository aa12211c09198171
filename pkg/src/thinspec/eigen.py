"""Sparse symmetric eigensolvers for the pencils of the pipeline.

Four layers:

* an SPD factorization (``cholesky``) used for shift-inverted solves, with a
  non-positive-pivot check so a wrong shift surfaces as ``NotSPD``;
* ``smallest_eigs`` — shift-invert Lanczos for the smallest eigenvalues of
  (A, M) with M SPD, the shift chosen from a Gershgorin bound and doubled on
  ``NotSPD``;
* the concave-root scheme ``principal_positive`` for the unique positive
  principal eigenvalue of an indefinite pencil (A, B): the smallest eigenvalue
  alpha1(mu) of (A - mu B, M) is concave in mu with alpha1(0) = 0, so the
  positive root is bracketed by doubling and polished by safeguarded Newton
  with the analytic slope -psi'B psi;
* ``positive_pencil_spectrum`` — extraction of the positive branch of
  B v = theta A v with A SPD (theta > 0 maps to lambda = 1/theta), via Lanczos
  in the A-inner product.

The inner Krylov iterations are ARPACK's implicitly restarted Lanczos
(full orthogonalization, deflation of converged Ritz pairs) through
scipy.sparse.linalg.eigsh; every call gets a fixed seeded start vector, so
results are reproducible run to run.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_CUTOFF = 60  # below this, skip ARPACK and use a direct dense solve
_SEED = 20240817

# ARPACK's reverse-communication core keeps state that is not re-entrant;
# concurrent callers (the per-eps sweep jobs) must take turns
_ARPACK_LOCK = threading.Lock()


def _eigsh(*args, **kwargs):
    with _ARPACK_LOCK:
        return spla.eigsh(*args, **kwargs)


class EigenError(RuntimeError):
    pass


class NotSPD(EigenError):
    """Matrix is not symmetric positive definite (non-positive pivot)."""


class NotConverged(EigenError):
    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class NoPositivePrincipal(EigenError):
    """The weight's discrete cell average is nonnegative: 0 is the only
    nonnegative principal eigenvalue, no positive one exists."""


class Unbracketable(EigenError):
    """alpha1 stayed positive up to mu = 1e8; the weight is likely (numerically)
    nonnegative-average on the mesh."""


class InvalidPrincipal(EigenError):
    """Root found but its eigenvector fails the principal-eigenpair structure
    (nonpositive B-norm or sign-changing nodal values): wrong root."""


class PartialSpectrum(EigenError):
    def __init__(self, message, found):
        super().__init__(message)
        self.found = found


class SizeExceeded(EigenError):
    pass


def _start_vector(n: int) -> np.ndarray:
    return np.random.default_rng(_SEED).standard_normal(n)


def gershgorin_lower(S: sp.csr_array) -> float:
    """Gershgorin lower bound on the spectrum of a symmetric sparse matrix."""
    d = S.diagonal()
    absrow = np.abs(S).sum(axis=1)
    return float(np.min(2 * d - absrow + (np.abs(d) - d)))  # d - (absrow - |d|)


class SPDFactor:
    """Sparse SPD factorization with a positive-pivot guarantee.

    Backed by SuperLU in symmetric mode with diagonal pivoting only; any
    non-positive pivot (or structural singularity) raises NotSPD.  solve()
    applies one step of iterative refinement, keeping the relative residual
    at the 1e-12 contract even for ill-scaled systems.
    """

    def __init__(self, S: sp.csr_array):
        S = sp.csc_matrix(S)
        self._mat = S
        try:
            self._lu = spla.splu(
                S,
                diag_pivot_thresh=0.0,
                permc_spec="MMD_AT_PLUS_A",
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:  # singular factorization
            raise NotSPD(f"factorization failed: {exc}") from exc
        pivots = self._lu.U.diagonal()
        if not np.all(pivots > 0):
            raise NotSPD("non-positive pivot encountered")
        # a pivot at roundoff scale means numerically semidefinite (e.g. an
        # unconstrained nullspace); treat as not positive definite
        if float(np.min(pivots)) <= 1e-13 * float(np.max(pivots)):
            raise NotSPD("pivot at roundoff scale; matrix numerically singular")

    @property
    def shape(self):
        return self._mat.shape

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(b)
        x += self._lu.solve(b - self._mat @ x)
        return x

    def as_operator(self) -> spla.LinearOperator:
        return spla.LinearOperator(self.shape, matvec=self.solve)


def cholesky(S: sp.csr_array) -> SPDFactor:
    """Factor an SPD sparse matrix; raises NotSPD on a non-positive pivot."""
    return SPDFactor(S)


class LUFactor:
    """Plain sparse LU for symmetric indefinite (but nonsingular) systems."""

    def __init__(self, S):
        self._lu = spla.splu(sp.csc_matrix(S))
        self.shape = S.shape

    def solve(self, b):
        return self._lu.solve(b)

    def as_operator(self):
        return spla.LinearOperator(self.shape, matvec=self.solve)


@dataclass
class EigResult:
    values: np.ndarray
    vectors: np.ndarray  # column j is the eigenvector of values[j]
    residuals: np.ndarray


def _fix_signs(vectors: np.ndarray, M: sp.csr_array | None) -> np.ndarray:
    """Deterministic sign convention: M-weighted mean positive, falling back to
    the sign of the largest-magnitude component when the mean is ~0."""
    out = vectors.copy()
    for j in range(out.shape[1]):
        v = out[:, j]
        mean = float(np.sum(M @ v)) if M is not None else float(np.sum(v))
        if abs(mean) <= 1e-8 * np.sum(np.abs(v)) / max(v.size, 1):
            mean = v[int(np.argmax(np.abs(v)))]
        if mean < 0:
            out[:, j] = -v
    return out


def _residuals_minv(A, M, Mfac, values, vectors) -> np.ndarray:
    res = np.empty(len(values))
    for j, lam in enumerate(values):
        r = A @ vectors[:, j] - lam * (M @ vectors[:, j])
        res[j] = np.sqrt(abs(float(r @ Mfac.solve(r))))
    return res


def smallest_eigs(A: sp.csr_array, M: sp.csr_array, k_count: int, tol: float = 1e-10,
                  maxiter: int = 500) -> EigResult:
    """k_count smallest eigenvalues of A v = lambda M v (M SPD).

    Shift-invert Lanczos on A + sigma M, with sigma grown geometrically from 1
    until the shifted matrix factors SPD; keeping sigma within 4x of the
    smallest workable value preserves the spectral gaps of the inverted
    operator.  Residuals are ||Av - lambda Mv|| in the M^{-1} norm with v
    M-normalized; convergence demands residual <= tol * (1 + |lambda|).
    """
    n = A.shape[0]
    if k_count < 1 or k_count > n:
        raise ValueError(f"k_count={k_count} out of range for dimension {n}")
    Mfac = cholesky(M)
    if n < DENSE_CUTOFF or k_count >= n - 1:
        w, V = scipy.linalg.eigh(A.toarray(), M.toarray())
        values, vectors = w[:k_count], V[:, :k_count]
    else:
        sigma = 1.0
        fac = None
        for _ in range(60):
            try:
                fac = cholesky((A + sigma * M).tocsr())
                break
            except NotSPD:
                sigma *= 4.0
        if fac is None:
            raise NotSPD("could not find an SPD shift for the pencil")
        try:
            values, vectors = _eigsh(
                A,
                k=k_count,
                M=M,
                sigma=-sigma,
                mode="normal",
                which="LM",
                OPinv=fac.as_operator(),
                v0=_start_vector(n),
                maxiter=maxiter,
                tol=tol * 1e-2,
            )
        except spla.ArpackNoConvergence as exc:
            raise NotConverged(f"Lanczos did not converge: {exc}") from exc
        order = np.argsort(values)
        values, vectors = values[order], vectors[:, order]
    for j in range(vectors.shape[1]):
        nrm = np.sqrt(float(vectors[:, j] @ (M @ vectors[:, j])))
        vectors[:, j] /= nrm
    vectors = _fix_signs(vectors, M)
    residuals = _residuals_minv(A, M, Mfac, values, vectors)
    bad = residuals > tol * (1.0 + np.abs(values))
    if np.any(bad):
        raise NotConverged(
            f"residuals {residuals[bad]} exceed tol={tol}", best_residual=float(np.max(residuals))
        )
    return EigResult(values=values, vectors=vectors, residuals=residuals)


def alpha1(A: sp.csr_array, B: sp.csr_array, M: sp.csr_array, mu: float,
           tol: float = 1e-10) -> tuple[float, np.ndarray]:
    """Smallest eigenvalue (and M-normalized eigenvector) of (A - mu B, M)."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    S = (A - mu * B).tocsr() if mu != 0.0 else A
    res = smallest_eigs(S, M, 1, tol=tol)
    return float(res.values[0]), res.vectors[:, 0]


@dataclass
class PrincipalPair:
    mu: float
    psi: np.ndarray  # B-normalized, strictly positive
    alpha_at_root: float
    residual: float
    evaluations: int


def principal_positive(A: sp.csr_array, B: sp.csr_array, M: sp.csr_array,
                       tol_alpha: float = 1e-10, rel_tol: float = 1e-9,
                       max_iter: int = 80, mu_cap: float = 1e8) -> PrincipalPair:
    """The unique positive principal eigenvalue of A psi = mu B psi.

    Exists iff the discrete weight average 1'B1 is negative; then
    alpha1(mu) (concave, alpha1(0)=0, initial slope -1'B1/1'M1 > 0) has exactly
    one positive root mu1, located by doubling/halving bracket search from
    mu=1 followed by safeguarded Newton with slope d alpha1/d mu = -psi'B psi
    (psi M-normalized).  The returned psi is normalized psi'B psi = 1 and is
    strictly positive up to a -1e-12 * max tolerance (Perron structure).
    """
    ones = np.ones(A.shape[0])
    avg = float(ones @ (B @ ones))
    # an average at roundoff scale (e.g. an exactly sign-balanced weight) has
    # no meaningful positive root either; measure roundoff against sum|B_ij|
    floor = 1e-13 * float(abs(B).sum())
    if avg >= -floor:
        raise NoPositivePrincipal(f"discrete weight average {avg:.3e} is nonnegative")
    evals = 0
    best = None  # (|alpha|, mu, alpha, psi), smallest |alpha| seen so far

    def f(mu):
        nonlocal evals, best
        evals += 1
        a, psi = alpha1(A, B, M, mu, tol=tol_alpha)
        if best is None or abs(a) < best[0]:
            best = (abs(a), mu, a, psi)
        return a, psi

    mu = 1.0
    a, _ = f(mu)
    if a > 0:
        lo, hi = mu, None
        while mu < mu_cap:
            mu *= 2.0
            a, _ = f(mu)
            if a <= 0:
                hi = mu
                break
            lo = mu
        if hi is None:
            raise Unbracketable("alpha1 stayed positive up to mu=1e8; weight nearly nonnegative on mesh")
    else:
        lo, hi = None, mu
        while mu > 1e-10:
            mu /= 2.0
            a, _ = f(mu)
            if a > 0:
                lo = mu
                break
            hi = mu
        if lo is None:
            raise InvalidPrincipal("alpha1 has no positive lobe above mu=1e-10")

    _, mu, a, psi = best
    for _ in range(max_iter):
        if abs(a) <= tol_alpha * (1.0 + mu):
            break
        slope = -float(psi @ (B @ psi))  # psi is M-normalized
        mu_new = mu - a / slope if slope != 0.0 else 0.5 * (lo + hi)
        if not (lo < mu_new < hi):
            mu_new = 0.5 * (lo + hi)
        mu = mu_new
        a, psi = f(mu)
        if a > 0:
            lo = mu
        else:
            hi = mu
        if (hi - lo) <= rel_tol * 1e-4 * mu:  # bracket exhausted at fp resolution
            _, mu, a, psi = best
            break
    else:
        raise NotConverged(f"principal root not converged after {max_iter} iterations", best_residual=abs(a))
    if abs(a) > tol_alpha * (1.0 + mu):
        raise NotConverged("bracket collapsed before alpha reached tolerance", best_residual=abs(a))

    c = float(psi @ (B @ psi))
    if c <= 0:
        raise InvalidPrincipal(f"candidate eigenvector has nonpositive weight norm {c:.3e}")
    psi = psi / np.sqrt(c)
    if float(np.sum(M @ psi)) < 0:
        psi = -psi
    if float(np.min(psi)) < -1e-12 * float(np.max(np.abs(psi))):
        raise InvalidPrincipal("candidate eigenvector changes sign; not the principal pair")
    r = A @ psi - mu * (B @ psi)
    Mfac = cholesky(M)
    residual = float(np.sqrt(abs(r @ Mfac.solve(r))))
    return PrincipalPair(mu=mu, psi=psi, alpha_at_root=a, residual=residual, evaluations=evals)


def positive_pencil_spectrum(A: sp.csr_array, B: sp.csr_array, k_count: int,
                             sigma_lambda: float | None = None, tol: float = 1e-10,
                             maxiter: int = 5000) -> EigResult:
    """The k_count smallest positive eigenvalues of A u = lambda B u, A SPD.

    Works on the reciprocal pencil B u = theta A u (theta = 1/lambda): the
    positive branch of lambda corresponds to the largest positive theta, which
    Lanczos in the A-inner product extracts as extreme eigenvalues.  With a
    sigma_lambda hint (an a-priori lambda_1 estimate, e.g. from a coarser
    mesh), a shift-inverted run targeted at theta = 1/sigma_lambda is used
    instead, which converges in far fewer iterations on fine meshes.

    Returns lambda ascending with A-orthonormal eigenvectors; residuals are
    ||B v - theta A v|| in the A^{-1} norm.  Raises PartialSpectrum when fewer
    than k_count positive eigenvalues exist.
    """
    n = A.shape[0]
    if k_count < 1:
        raise ValueError("k_count must be positive")
    Afac = cholesky(A)  # also certifies A SPD

    if n < DENSE_CUTOFF or k_count + 4 >= n - 1:
        theta, V = scipy.linalg.eigh(B.toarray(), A.toarray())
    else:
        if sigma_lambda is not None:
            theta_t = 1.0 / float(sigma_lambda)
            shifted = (B - theta_t * A).tocsc()
            opinv = LUFactor(shifted).as_operator()
            try:
                theta, V = _eigsh(
                    B, k=k_count, M=A, sigma=theta_t, mode="normal", which="LM",
                    OPinv=opinv, v0=_start_vector(n),
                    maxiter=maxiter, tol=tol * 1e-2,
                )
            except spla.ArpackNoConvergence:
                theta = np.array([])
            if theta.size < k_count or np.any(theta[np.argsort(theta)[-k_count:]] <= 0):
                sigma_lambda = None  # hint failed; fall through to the robust path
        if sigma_lambda is None:
            kk = min(k_count + 4, n - 2)
            try:
                theta, V = _eigsh(
                    B, k=kk, M=A, which="LA", Minv=Afac.as_operator(),
                    v0=_start_vector(n), maxiter=maxiter, tol=tol * 1e-2,
                    ncv=min(n - 1, max(60, 4 * kk)),
                )
            except spla.ArpackNoConvergence as exc:
                raise NotConverged(f"positive-branch Lanczos did not converge: {exc}") from exc

    order = np.argsort(theta)
    theta, V = theta[order], V[:, order]
    pos = theta > 0
    npos = int(np.count_nonzero(pos))
    if npos < k_count:
        lam_found = np.sort(1.0 / theta[pos])
        raise PartialSpectrum(
            f"only {npos} positive pencil eigenvalues available (requested {k_count})", lam_found
        )
    theta_sel = theta[pos][-k_count:][::-1]  # largest theta first -> lambda ascending
    V_sel = V[:, pos][:, -k_count:][:, ::-1].copy()
    for j in range(k_count):
        nrm = np.sqrt(float(V_sel[:, j] @ (A @ V_sel[:, j])))
        V_sel[:, j] /= nrm
    V_sel = _fix_signs(V_sel, None)
    residuals = np.empty(k_count)
    for j in range(k_count):
        r = B @ V_sel[:, j] - theta_sel[j] * (A @ V_sel[:, j])
        residuals[j] = np.sqrt(abs(float(r @ Afac.solve(r))))
    bad = residuals > 1e-7 * np.abs(theta_sel)  # residual/|theta| bounds the relative lambda error
    if np.any(bad):
        raise NotConverged(f"pencil residuals {residuals[bad]} too large for theta {theta_sel[bad]}",
                           best_residual=float(np.max(residuals)))
    return EigResult(values=1.0 / theta_sel, vectors=V_sel, residuals=residuals)


def dense_oracle(S, M=None, size_cap: int = 3000):
    """All eigenpairs of S v = w M v by a direct dense solve (tests only).

    M must be SPD (defaults to the identity).  Refuses dimensions > 3000.
    """
    n = S.shape[0]
    if n > size_cap:
        raise SizeExceeded(f"dense oracle limited to {size_cap} DOF, got {n}")
    Sd = S.toarray() if sp.issparse(S) else np.asarray(S)
    if M is None:
        return scipy.linalg.eigh(Sd)
    Md = M.toarray() if sp.issparse(M) else np.asarray(M)
    return scipy.linalg.eigh(Sd, Md)
