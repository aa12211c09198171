"""Coefficient problems (a, rho) and numerical checks of the standing hypotheses.

A problem couples a symmetric 2x2 matrix coefficient a(x1, y1, y2) with a
scalar weight rho(x1, y1, y2), both 1-periodic in y1.  The weight is expected
to change sign on the cell with a negative cell average; those facts (H4, H5),
uniform ellipticity (H3) and y1-periodicity (H2) are verified numerically on a
sampling grid.  Joint Hoelder regularity (H1) is not decidable from samples
and is reported as "assumed".
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import expr
from .expr import ExprAst

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

HYPOTHESES = ("H1", "H2", "H3", "H4", "H5")
PERIODICITY_TOL = 1e-12
BOUNDARY_SAMPLES = 64


class ConfigError(ValueError):
    """Malformed problem configuration."""


@dataclass(frozen=True)
class CoefficientProblem:
    """The pair (a, rho) as parsed expressions plus metadata."""

    name: str
    a11: ExprAst
    a12: ExprAst
    a22: ExprAst
    rho: ExprAst
    description: str = ""

    @classmethod
    def from_sources(
        cls,
        name: str,
        rho: str,
        a: Optional[str] = None,
        a11: Optional[str] = None,
        a12: Optional[str] = None,
        a22: Optional[str] = None,
        description: str = "",
    ) -> "CoefficientProblem":
        """Build from expression strings; either scalar ``a`` or matrix entries.

        A scalar ``a`` means a*I.  With matrix entries, a12 defaults to "0"
        (a21 is structurally identical to a12, keeping the matrix symmetric).
        """
        if not rho:
            raise ConfigError("coefficient problem needs a 'rho' expression")
        if a is None and a11 is None and a12 is None and a22 is None:
            raise ConfigError("coefficient problem needs 'a' or a11/a22 entries")
        if a is not None:
            if any(v is not None for v in (a11, a12, a22)):
                raise ConfigError("give either scalar 'a' or matrix entries a11/a12/a22, not both")
            e = expr.parse(a)
            e11, e12, e22 = e, expr.Num(0.0), e
        else:
            if a11 is None or a22 is None:
                raise ConfigError("matrix coefficient needs both a11 and a22 (a12 optional)")
            e11 = expr.parse(a11)
            e12 = expr.parse(a12) if a12 is not None else expr.Num(0.0)
            e22 = expr.parse(a22)
        return cls(name=name, a11=e11, a12=e12, a22=e22, rho=expr.parse(rho), description=description)

    def a_values(self, x1, y1, y2):
        """Evaluate (a11, a12, a22) at broadcastable coordinate arrays."""
        shape = np.broadcast(np.asarray(x1), np.asarray(y1), np.asarray(y2)).shape
        out = []
        for e in (self.a11, self.a12, self.a22):
            v = expr.evaluate(e, x1, y1, y2)
            out.append(np.broadcast_to(np.asarray(v, dtype=float), shape))
        return tuple(out)

    def rho_values(self, x1, y1, y2):
        shape = np.broadcast(np.asarray(x1), np.asarray(y1), np.asarray(y2)).shape
        v = expr.evaluate(self.rho, x1, y1, y2)
        return np.broadcast_to(np.asarray(v, dtype=float), shape)

    @property
    def depends_on_y2(self) -> bool:
        names = set()
        for e in (self.a11, self.a12, self.a22, self.rho):
            names |= expr.free_names(e)
        return "y2" in names

    @property
    def depends_on_x1(self) -> bool:
        names = set()
        for e in (self.a11, self.a12, self.a22, self.rho):
            names |= expr.free_names(e)
        return "x1" in names

    @property
    def a_is_scalar(self) -> bool:
        """True when a is diagonal with equal entries (a = scalar * I)."""
        return self.a12 == expr.Num(0.0) and self.a11 == self.a22


P_CONST = CoefficientProblem.from_sources(
    name="p_const",
    a="1",
    rho="cos(2*pi*y1) - 0.5",
    description="x1-independent weight; the cell eigenvalue is constant in x1 (no interior minimum).",
)

P_LOC = CoefficientProblem.from_sources(
    name="p_loc",
    a="1",
    rho="cos(2*pi*y1) - (0.5 + 0.3*x1^2)",
    description="Weight drifts more negative away from x1=0, so the cell eigenvalue has its unique minimum there.",
)

_BUILTINS = {"p_const": P_CONST, "p_loc": P_LOC}


def builtin_problem(name: str) -> CoefficientProblem:
    key = name.strip().lower()
    if key not in _BUILTINS:
        raise ConfigError(f"unknown builtin problem {name!r}; available: {sorted(_BUILTINS)}")
    return _BUILTINS[key]


_PROBLEM_KEYS = {"name", "description", "a", "a11", "a12", "a22", "rho"}


def load_toml(path: str) -> CoefficientProblem:
    """Load a problem from a TOML file with a single [problem] table.

    Recognized keys: name, description, rho (required), and either scalar a
    or matrix entries a11/a12/a22.  Unknown keys are errors.
    """
    with open(path, "rb") as fh:
        try:
            data = _toml.load(fh)
        except _toml.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    extra_tables = set(data) - {"problem"}
    if extra_tables:
        raise ConfigError(f"{path}: unknown top-level tables {sorted(extra_tables)}")
    if "problem" not in data:
        raise ConfigError(f"{path}: missing [problem] table")
    table = data["problem"]
    unknown = set(table) - _PROBLEM_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown [problem] keys {sorted(unknown)}")
    if "rho" not in table:
        raise ConfigError(f"{path}: [problem] needs a 'rho' expression")
    try:
        return CoefficientProblem.from_sources(
            name=table.get("name", "unnamed"),
            description=table.get("description", ""),
            rho=table["rho"],
            a=table.get("a"),
            a11=table.get("a11"),
            a12=table.get("a12"),
            a22=table.get("a22"),
        )
    except expr.ExprSyntaxError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def resolve_problem(source: str) -> CoefficientProblem:
    """Accept a builtin name (p_const, p_loc) or a TOML file path."""
    if source.strip().lower() in _BUILTINS:
        return _BUILTINS[source.strip().lower()]
    return load_toml(source)


# -- hypothesis checking ------------------------------------------------------

_GAUSS_OFFSETS = ((1 - 1 / np.sqrt(3.0)) / 2, (1 + 1 / np.sqrt(3.0)) / 2)


def _cell_gauss_points(n1: int, n2: int):
    """Composite 2x2 Gauss points and weights on an n1 x n2 partition of the unit cell."""
    y1 = np.concatenate([(np.arange(n1) + d) / n1 for d in _GAUSS_OFFSETS])
    y2 = np.concatenate([(np.arange(n2) + d) / n2 for d in _GAUSS_OFFSETS])
    Y1, Y2 = np.meshgrid(y1, y2, indexing="ij")
    w = 1.0 / (y1.size * y2.size) * np.ones_like(Y1)
    return Y1.ravel(), Y2.ravel(), w.ravel()


@dataclass
class HypothesisReport:
    """Numerical verdicts for the standing hypotheses on (a, rho)."""

    x1_samples: np.ndarray
    ellipticity_lower_bound: float  # min over samples of the smallest eigenvalue of a
    sign_change_ok: np.ndarray  # bool per x1 sample (H4)
    local_averages: np.ndarray  # cell average of rho per x1 sample (H5)
    periodicity_defect: float  # max |f(x1,0,y2) - f(x1,1,y2)| over fields/samples (H2)
    verdicts: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        """True when every checked hypothesis (H2-H5) passes."""
        return all(self.verdicts[h] == "pass" for h in ("H2", "H3", "H4", "H5"))

    def failed(self) -> list[str]:
        return [h for h in HYPOTHESES if self.verdicts.get(h) == "fail"]

    def to_dict(self) -> dict:
        return {
            "x1_samples": [float(v) for v in self.x1_samples],
            "ellipticity_lower_bound": float(self.ellipticity_lower_bound),
            "sign_change_ok": [bool(v) for v in self.sign_change_ok],
            "local_averages": [float(v) for v in self.local_averages],
            "periodicity_defect": float(self.periodicity_defect),
            "verdicts": dict(self.verdicts),
        }


DEFAULT_X1_SAMPLES = tuple(np.linspace(-1.0, 1.0, 9))


def check_hypotheses(
    problem: CoefficientProblem,
    x1_samples: Sequence[float] = DEFAULT_X1_SAMPLES,
    cell_quadrature: tuple[int, int] = (32, 32),
) -> HypothesisReport:
    """Check H2-H5 on a sampling grid; H1 (regularity) is marked "assumed".

    Ellipticity uses the closed-form smallest eigenvalue of the 2x2 symmetric
    matrix at every quadrature point; cell averages use composite 2x2 Gauss
    quadrature on the given partition (at least 32x32); periodicity compares
    the y1=0 and y1=1 traces at 64 lateral samples.
    """
    xs = np.asarray(list(x1_samples), dtype=float)
    if xs.size == 0 or np.any(np.abs(xs) > 1):
        raise ValueError("x1_samples must be a nonempty subset of [-1, 1]")
    n1, n2 = cell_quadrature
    if n1 < 32 or n2 < 32:
        raise ValueError("cell quadrature grid must be at least 32x32")

    q1, q2, w = _cell_gauss_points(n1, n2)
    y2_edge = np.linspace(0.0, 1.0, BOUNDARY_SAMPLES)
    zeros = np.zeros_like(y2_edge)
    ones = np.ones_like(y2_edge)

    lam_min = np.inf
    defect = 0.0
    averages = np.empty(xs.size)
    sign_ok = np.empty(xs.size, dtype=bool)
    for i, x1 in enumerate(xs):
        try:
            a11, a12, a22 = problem.a_values(x1, q1, q2)
            rho = problem.rho_values(x1, q1, q2)
        except expr.EvalError as exc:
            raise expr.EvalError(f"{exc} while sampling at x1={x1}") from exc
        tr2 = (a11 + a22) / 2
        disc = np.sqrt(((a11 - a22) / 2) ** 2 + a12**2)
        lam_min = min(lam_min, float(np.min(tr2 - disc)))
        averages[i] = float(np.dot(w, rho))
        sign_ok[i] = bool(np.min(rho) < 0 < np.max(rho))
        for e in (problem.a11, problem.a12, problem.a22, problem.rho):
            lo = np.asarray(expr.evaluate(e, x1, zeros, y2_edge), dtype=float)
            hi = np.asarray(expr.evaluate(e, x1, ones, y2_edge), dtype=float)
            defect = max(defect, float(np.max(np.abs(lo - hi))))

    verdicts = {
        "H1": "assumed",
        "H2": "pass" if defect <= PERIODICITY_TOL else "fail",
        "H3": "pass" if lam_min > 0 else "fail",
        "H4": "pass" if bool(np.all(sign_ok)) else "fail",
        "H5": "pass" if bool(np.all(averages < 0)) else "fail",
    }
    return HypothesisReport(
        x1_samples=xs,
        ellipticity_lower_bound=lam_min,
        sign_change_ok=sign_ok,
        local_averages=averages,
        periodicity_defect=defect,
        verdicts=verdicts,
    )
