"""Command-line front end for the thin-rod spectral pipeline.

Subcommands cover each pipeline stage: hypothesis checks, the principal cell
eigenpair, the effective model, the limit oscillator spectrum, the fine-scale
eps sweep, and a dense-oracle cross-check of small rod instances.

Conventions: stdout carries data (JSON, or CSV for the oscillator table),
stderr carries diagnostics as one-line JSON records.  Exit codes: 0 success,
2 when a standing hypothesis fails (no positive principal eigenvalue, flat
curvature), 1 for configuration or solver errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, eigen
from .cell import H6Violated, build_effective_model, principal_cell_eig
from .finescale import (
    ResolutionPolicy,
    admissible_eps,
    assemble_rod,
    oscillator_spec,
    positive_spectrum,
    sweep,
)
from .mesh_fem import CellGrid, write_matrix_market
from .oscillator import OscillatorSpec, nu_closed_form, solve_truncated
from .problems import ConfigError, check_hypotheses, resolve_problem

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_HYPOTHESIS = 2


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1: the conventional argparse code 2 is reserved for
    # hypothesis failures here
    def error(self, message):
        self.exit(EXIT_INTERNAL, f"{self.prog}: error: {message}\n")


def _parse_eps(token: str) -> float:
    token = token.strip()
    if "/" in token:
        num, den = token.split("/", 1)
        return float(num) / float(den)
    return float(token)


def _parse_eps_list(text: str) -> tuple[float, ...]:
    values = tuple(_parse_eps(t) for t in text.split(",") if t.strip())
    if not values:
        raise ValueError("empty eps list")
    return values


def _parse_grid(text: str) -> tuple[int, int]:
    n1, sep, n2 = text.lower().partition("x")
    if not sep:
        raise ValueError(f"expected N1xN2, got {text!r}")
    return int(n1), int(n2)


@dataclass(frozen=True)
class RunConfig:
    """Validated settings of one CLI invocation."""

    command: str
    problem: str | None = None
    model_json: str | None = None
    x1: float = 0.0
    cell_grid: tuple[int, int] = (64, 8)
    cell_n1: int = 64
    eps: tuple[float, ...] = ()
    j_max: int = 2
    k_count: int = 4
    per_period: int | None = None
    m2: int | None = None
    out: Path | None = None
    workers: int | None = None
    tol: float = 1e-8
    aeff_unweighted: bool = False
    dump_mm: bool = False
    numeric: bool = False

    def __post_init__(self):
        for e in self.eps:
            if not admissible_eps(e):
                raise ConfigError(
                    f"eps={e} is not admissible: need the reciprocal of an even"
                    " integer in (0, 1/4]")
        if self.dump_mm and self.out is None:
            raise ConfigError("--dump-mm requires --out")
        if self.j_max < 1:
            raise ConfigError("--jmax must be >= 1")
        if self.k_count < 1:
            raise ConfigError("--k must be >= 1")

    @property
    def policy(self) -> ResolutionPolicy:
        return ResolutionPolicy(per_period=self.per_period, m2=self.m2)


def _config(args: argparse.Namespace) -> RunConfig:
    eps = getattr(args, "eps", ())
    if isinstance(eps, float):
        eps = (eps,)
    return RunConfig(
        command=args.command,
        problem=getattr(args, "problem", None),
        model_json=getattr(args, "model", None),
        x1=getattr(args, "x1", 0.0),
        cell_grid=getattr(args, "grid", (64, 8)),
        cell_n1=getattr(args, "cell_n1", 64),
        eps=tuple(eps or ()),
        j_max=getattr(args, "jmax", 2),
        k_count=getattr(args, "k", 4),
        per_period=getattr(args, "per_period", None),
        m2=getattr(args, "m2", None),
        out=getattr(args, "out", None),
        workers=getattr(args, "workers", None),
        tol=getattr(args, "tol", 1e-8),
        aeff_unweighted=getattr(args, "aeff_unweighted", False),
        dump_mm=getattr(args, "dump_mm", False),
        numeric=getattr(args, "numeric", False),
    )


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _diagnostic(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)


def _fmt(x) -> str:
    return repr(float(x))


def _effective(config: RunConfig):
    problem = resolve_problem(config.problem)
    model = build_effective_model(problem, n1=config.cell_n1,
                                  weighted_aeff=not config.aeff_unweighted)
    return problem, model


def _cmd_check(config: RunConfig) -> int:
    problem = resolve_problem(config.problem)
    report = check_hypotheses(problem)
    _emit({"problem": problem.name, "ok": report.ok, **report.to_dict()})
    if not report.ok:
        _diagnostic("HypothesisViolated",
                    "failed hypotheses: " + ", ".join(report.failed()),
                    hypotheses=report.failed())
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _cmd_cell(config: RunConfig) -> int:
    problem = resolve_problem(config.problem)
    pair = principal_cell_eig(problem, config.x1, CellGrid(*config.cell_grid))
    _emit({
        "problem": problem.name,
        "x1": pair.x1,
        "grid": list(config.cell_grid),
        "mu": pair.mu,
        "residual": pair.residual,
        "normalization": pair.normalization,
        "min_psi": float(pair.psi.min()),
    })
    return EXIT_OK


def _cmd_effective(config: RunConfig) -> int:
    problem, model = _effective(config)
    _emit({"problem": problem.name, **model.to_dict()})
    return EXIT_OK


def _cmd_oscillator(config: RunConfig) -> int:
    if config.model_json:
        with open(config.model_json) as fh:
            data = json.load(fh)
        spec = OscillatorSpec(a_eff=data["a_eff"], c_eff=data["c_eff"],
                              mu2=data["mu2"], rho_avg=data["rho_psi_avg"])
    else:
        _, model = _effective(config)
        spec = oscillator_spec(model)
    numeric = solve_truncated(spec, k_count=config.k_count).nus if config.numeric else None
    print("j,nu" + (",nu_numeric" if config.numeric else ""))
    for j in range(1, config.k_count + 1):
        row = f"{j},{_fmt(nu_closed_form(spec, j))}"
        if numeric is not None:
            row += f",{_fmt(numeric[j - 1])}"
        print(row)
    return EXIT_OK


def _cmd_sweep(config: RunConfig) -> int:
    problem, model = _effective(config)
    report = sweep(problem, config.eps, j_max=config.j_max, model=model,
                   policy=config.policy, out_dir=config.out, workers=config.workers)
    if config.dump_mm:
        mm_dir = Path(config.out) / "matrices"
        mm_dir.mkdir(parents=True, exist_ok=True)
        for eps in report.eps:
            rod = assemble_rod(problem, eps, config.policy)
            tag = f"eps_1_{round(1 / eps)}"
            for label, matrix in (("A", rod.A), ("B", rod.B), ("M", rod.M)):
                write_matrix_market(str(mm_dir / f"{tag}_{label}.mtx"), matrix)
    _emit(report.to_dict())
    return EXIT_OK


def _cmd_oracle(config: RunConfig) -> int:
    problem = resolve_problem(config.problem)
    eps = config.eps[0]
    rod = assemble_rod(problem, eps, config.policy)
    table = positive_spectrum(rod, config.k_count)
    w, _ = eigen.dense_oracle(rod.B, rod.A)  # refuses instances over 3000 DOF
    lam_dense = np.sort(1.0 / w[w > 1e-12])[: config.k_count]
    rel = float(np.max(np.abs(table.values - lam_dense) / np.abs(lam_dense)))
    ok = rel <= config.tol
    _emit({
        "problem": problem.name,
        "eps": eps,
        "dof": rod.ndof,
        "lambda_sparse": [float(v) for v in table.values],
        "lambda_dense": [float(v) for v in lam_dense],
        "max_rel_diff": rel,
        "tol": config.tol,
        "ok": ok,
    })
    return EXIT_OK if ok else EXIT_INTERNAL


_COMMANDS = {
    "check": _cmd_check,
    "cell": _cmd_cell,
    "effective": _cmd_effective,
    "oscillator": _cmd_oscillator,
    "sweep": _cmd_sweep,
    "oracle": _cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="thinspec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"thinspec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="evaluate the standing hypotheses on (a, rho)")
    p.add_argument("--problem", required=True,
                   help="builtin name (p_const, p_loc) or a problem TOML path")

    p = sub.add_parser("cell", help="principal positive cell eigenpair at one x1")
    p.add_argument("--problem", required=True)
    p.add_argument("--x1", type=float, default=0.0)
    p.add_argument("--grid", type=_parse_grid, default=(64, 8), metavar="N1xN2")

    p = sub.add_parser("effective", help="effective model: mu(0), mu''(0), a_eff, c_eff")
    p.add_argument("--problem", required=True)
    p.add_argument("--cell-n1", type=int, default=64, help="cell grid resolution")
    p.add_argument("--aeff-unweighted", action="store_true",
                   help="use the plain-coefficient corrector form of a_eff")

    p = sub.add_parser("oscillator", help="limit oscillator eigenvalues nu_j (CSV)")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--problem")
    source.add_argument("--model", help="model JSON written by `thinspec effective`")
    p.add_argument("--k", type=int, default=4, help="number of modes")
    p.add_argument("--numeric", action="store_true",
                   help="add the truncated-interval FEM cross-check column")
    p.add_argument("--cell-n1", type=int, default=64)
    p.add_argument("--aeff-unweighted", action="store_true")

    p = sub.add_parser("sweep", help="two-term asymptotics verification over eps")
    p.add_argument("--problem", required=True)
    p.add_argument("--eps", type=_parse_eps_list, required=True, metavar="LIST",
                   help="comma-separated, fractions welcome: 1/8,1/16,1/32")
    p.add_argument("--jmax", type=int, default=2)
    p.add_argument("--out", type=Path, default=None,
                   help="directory for report.json and tables/*.csv")
    p.add_argument("--cell-n1", type=int, default=64)
    p.add_argument("--per-period", type=int, default=None,
                   help="override elements per coefficient period")
    p.add_argument("--m2", type=int, default=None, help="override transverse elements")
    p.add_argument("--workers", type=int, default=None,
                   help="concurrent eps jobs (default: THINSPEC_WORKERS or cores)")
    p.add_argument("--aeff-unweighted", action="store_true")
    p.add_argument("--dump-mm", action="store_true",
                   help="dump rod matrices in Matrix Market format (needs --out)")

    p = sub.add_parser("oracle", help="dense-oracle cross-check of a small rod")
    p.add_argument("--problem", required=True)
    p.add_argument("--eps", type=_parse_eps, default=1 / 8)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--per-period", type=int, default=12)
    p.add_argument("--m2", type=int, default=None)
    p.add_argument("--tol", type=float, default=1e-8)

    return parser


def run(argv=None) -> int:
    """Parse argv, dispatch, and map failures to the documented exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config = _config(args)
        return _COMMANDS[config.command](config)
    except (H6Violated, eigen.NoPositivePrincipal) as exc:
        _diagnostic(type(exc).__name__, str(exc),
                    hypothesis="H6" if isinstance(exc, H6Violated) else "H5")
        return EXIT_HYPOTHESIS
    except KeyboardInterrupt:
        raise
    except Exception as exc:
        _diagnostic(type(exc).__name__, str(exc))
        return EXIT_INTERNAL


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
