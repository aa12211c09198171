"""thinspec: spectral homogenization of indefinite eigenproblems on thin rods.

Computes the principal cell eigenvalue and eigenfunction of the periodic cell
problem with a sign-changing weight, the correctors and effective
coefficients of the homogenized model, the limiting harmonic-oscillator
spectrum, and verifies the two-term eigenvalue asymptotics

    lambda_j = mu(0)/eps^2 + nu_j/eps + o(1/eps)

against direct finite-element eigencomputation on the thin rod.
"""

__version__ = "0.1.0"

from .problems import CoefficientProblem, P_CONST, P_LOC, check_hypotheses  # noqa: F401
