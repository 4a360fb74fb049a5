"""Command-line drivers: flow, ma-path, spectrum, energies, verify.

Exit codes: 0 ok, 1 I/O error, 2 configuration error, 3 numerical failure,
4 invariant breach.  On a nonzero exit a JSON failure record is written to
``failure.json`` in the output directory (when it can be created) and to
stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Callable

import numpy as np

from . import _kernels
from .config import ConfigError, RunConfig, load_config
from .flow import (DecayFitError, FlowSettings, InsufficientTailError, StiffnessError,
                   decay_fit, run_flow)
from .functionals import PoissonSolveError, energy_Ek, ricci_potential
from .geometry import DegenerateMetricError, MetricState, make_grid
from .io import (dumps, write_csv, write_flow_csv, write_flow_plots, write_summary,
                 write_svg)
from .ma_path import ContinuationFailure, NewtonDivergence, continuity_path
from .potentials import (PRESETS, legendre_potential, preset_potential, radial_poly_potential,
                         random_potential)
from .spectrum import EigenResidualError, spectrum_report
from .verify import format_table, run_suites

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INVARIANT = 4

NUMERICAL_ERRORS = (StiffnessError, DegenerateMetricError, NewtonDivergence, ContinuationFailure,
                    EigenResidualError, PoissonSolveError, InsufficientTailError,
                    np.linalg.LinAlgError, FloatingPointError)


class InvariantBreach(RuntimeError):
    def __init__(self, failures: list[str]):
        super().__init__("; ".join(failures))
        self.failures = failures


# ---------------------------------------------------------------------------
# setup from a config
# ---------------------------------------------------------------------------

def build_state(cfg: RunConfig) -> MetricState:
    """Grid and initial metric described by the geometry and initial_potential sections."""
    geo = cfg["geometry"]
    grid = make_grid(geo["kind"], geo["n"], geo["grid_size"])
    p = cfg["initial_potential"]
    kind = p["kind"]
    if kind == "legendre_coeffs":
        phi = legendre_potential(grid, p["coefficients"])
    elif kind == "radial_poly":
        phi = radial_poly_potential(grid, p["coefficients"])
    elif kind == "random":
        phi = random_potential(grid, cfg.potential_seed, p["order"], p["density_floor"])
    elif kind in PRESETS:
        phi = preset_potential(grid, kind, p["amplitude"])
    else:  # pragma: no cover - rejected by the config schema
        raise ConfigError(f"unknown kind {kind!r}", "initial_potential.kind")
    try:
        return MetricState(grid, phi)
    except DegenerateMetricError as exc:
        raise ConfigError(f"initial potential is not admissible ({exc})", "initial_potential") from None


def flow_settings(cfg: RunConfig) -> FlowSettings:
    f = cfg["flow"]
    try:
        return FlowSettings(**f)
    except ValueError as exc:
        raise ConfigError(str(exc), "flow") from None


def _out_dir(cfg: RunConfig) -> str:
    d = cfg["output"]["directory"]
    os.makedirs(d, exist_ok=True)
    return d


def _emit(cfg: RunConfig, command: str, result: dict, csv: tuple | None = None,
          status: str = "ok") -> None:
    d = _out_dir(cfg)
    out = cfg["output"]
    if out["emit_csv"] and csv is not None:
        write_csv(os.path.join(d, "run.csv"), *csv)
    if out["emit_json"]:
        write_summary(os.path.join(d, "summary.json"), command, cfg.to_dict(), result, status)


def _finite_max(a) -> float:
    a = np.asarray(a, dtype=float)
    a = a[np.isfinite(a)]
    return float(a.max()) if a.size else 0.0


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_flow(cfg: RunConfig, resume: str | None = None) -> dict:
    b = build_state(cfg)
    settings = flow_settings(cfg)
    d = _out_dir(cfg)
    ck_dir = None
    if settings.checkpoint_stride:
        ck_dir = os.path.join(d, "checkpoints")
        os.makedirs(ck_dir, exist_ok=True)
    trace = run_flow(b, settings, checkpoint_dir=ck_dir, resume=resume)
    failures = []
    if trace.e0_violations(1e-8).size:
        failures.append("K-energy increased along the flow")
    pali = _finite_max(np.abs(trace.pali_residual) / (1.0 + np.abs(trace.E1)))
    if pali > 1e-6:
        failures.append(f"Pali identity residual {pali:.3e} exceeds 1e-6")
    if trace.Rmin[0] < 0:
        gap = _finite_max(trace.Rmin[0] * np.exp(-trace.times) - trace.Rmin)
        if gap > 1e-6:
            failures.append(f"minimum scalar curvature bound violated by {gap:.3e}")
    result = {
        "backend": _kernels.backend(),
        "converged": trace.converged,
        "stop_reason": trace.stop_reason,
        "t_stop": trace.t_stop,
        "samples": len(trace),
        "steps_accepted": trace.steps_accepted,
        "steps_rejected": trace.steps_rejected,
        "c_omega": trace.ricci.c_omega,
        "final": {k: float(getattr(trace, k)[-1]) for k in
                  ("E0", "Rmin", "Rmax", "sup_ric_dev", "eps", "mu0", "mu1", "lambda1",
                   "diameter", "pali_residual")},
        "final_E": [float(v) for v in trace.Ek[-1]],
        "max_pali_residual": pali,
        "checkpoints": [os.path.basename(p) for p in trace.checkpoints],
    }
    norm = trace.normalization
    if norm is not None:
        result["normalization"] = {"C0": norm.C0, "residual": norm.residual,
                                   "integral": norm.integral, "energy_drop": norm.energy_drop,
                                   "final": norm.final, "positive": norm.positive}
        if trace.converged and not norm.boundary and not norm.positive:
            failures.append("normalized mean velocity is not positive")
    else:
        result["normalization"] = {"error": trace.normalization_error}
    try:
        fit = decay_fit(trace)
        result["decay_fit"] = {"alpha0": fit.alpha0, "alpha1": fit.alpha1, "gamma": fit.gamma_used,
                               "window": [fit.t_start, fit.t_end]}
    except DecayFitError as exc:
        result["decay_fit"] = {"error": str(exc)}
    result["invariant_failures"] = failures
    status = "invariant_breach" if failures else "ok"
    if cfg["output"]["emit_csv"]:
        write_flow_csv(os.path.join(d, "run.csv"), trace)
    if cfg["output"]["emit_svg"]:
        write_flow_plots(d, trace)
    _emit(cfg, "flow", result, None, status)
    if failures:
        raise InvariantBreach(failures)
    return result


def cmd_ma_path(cfg: RunConfig) -> dict:
    b = build_state(cfg)
    r = continuity_path(b, cfg["ma_path"]["steps"])
    failures = []
    if not r.endpoint_min_ricci > 0:
        failures.append("endpoint Ricci curvature is not positive")
    if _finite_max(r.e0_increments) > 1e-8:
        failures.append("K-energy increased along the path")
    if r.residuals.max() > 1e-10:
        failures.append(f"Monge-Ampere residual {r.residuals.max():.3e} exceeds 1e-10")
    if r.ricci_identity.max() > 1e-6:
        failures.append(f"traced Ricci identity residual {r.ricci_identity.max():.3e} exceeds 1e-6")
    if _finite_max(r.energy_identity) > 1e-4:
        failures.append("K-energy derivative identity fails")
    result = {
        "steps": int(r.t_values.size), "halvings": r.halvings,
        "endpoint_min_ricci": r.endpoint_min_ricci,
        "max_newton_iterations": int(r.newton_iterations.max()),
        "max_residual": float(r.residuals.max()),
        "E0_start": float(r.E0_along_path[0]), "E0_end": float(r.E0_along_path[-1]),
        "max_E0_increment": _finite_max(r.e0_increments),
        "max_ricci_identity": float(r.ricci_identity.max()),
        "max_tangent_residual": _finite_max(r.tangent_residual),
        "max_energy_identity": _finite_max(r.energy_identity),
        "invariant_failures": failures,
    }
    cols = ["t", "c_t", "E0", "newton_iterations", "residual", "gauge", "ricci_identity",
            "tangent_residual", "energy_identity"]
    rows = [[r.t_values[j], r.c_t[j], r.E0_along_path[j], int(r.newton_iterations[j]),
             r.residuals[j], r.gauge[j], r.ricci_identity[j], r.tangent_residual[j],
             r.energy_identity[j]] for j in range(r.t_values.size)]
    _emit(cfg, "ma-path", result, (cols, rows), "invariant_breach" if failures else "ok")
    if cfg["output"]["emit_svg"]:
        write_svg(os.path.join(_out_dir(cfg), "ma_path_energy.svg"),
                  [("E0", r.t_values, r.E0_along_path)],
                  title="K-energy along the continuity path", xlabel="t", ylabel="E0")
    if failures:
        raise InvariantBreach(failures)
    return result


def cmd_spectrum(cfg: RunConfig) -> dict:
    s = build_state(cfg)
    sp = cfg["spectrum"]
    rep = spectrum_report(s, sp["modes"], sp["tol"])
    lam = rep.lambda1
    rho = s.rho_r.min() if s.n == 1 else min(s.rho_r.min(), s.rho_t.min())
    bound = lam ** 2 - rho * lam
    failures = []
    if rep.W > bound + 1e-8:
        failures.append(f"W = {rep.W:.6g} exceeds lambda1^2 - rho_min lambda1 = {bound:.6g}")
    result = {"eigenvalues": rep.eigenvalues, "residuals": rep.residuals, "lambda1": lam,
              "poincare_constant": rep.poincare_constant, "restricted_gap": rep.gamma,
              "W": rep.W, "W_bound": bound, "holomorphy_residual": rep.theta_residual,
              "invariant_failures": failures}
    cols = ["index", "eigenvalue", "residual"]
    rows = [[j + 1, rep.eigenvalues[j], rep.residuals[j]] for j in range(rep.eigenvalues.size)]
    _emit(cfg, "spectrum", result, (cols, rows), "invariant_breach" if failures else "ok")
    if cfg["output"]["emit_svg"]:
        x = s.grid.x
        order = np.argsort(x)
        series = [(f"f{j + 1}", x[order], rep.eigenvectors[:, j][order])
                  for j in range(rep.eigenvalues.size)]
        write_svg(os.path.join(_out_dir(cfg), "eigenfunctions.svg"), series,
                  title="invariant eigenfunctions", xlabel="x", ylabel="f")
    if failures:
        raise InvariantBreach(failures)
    return result


def cmd_energies(cfg: RunConfig) -> dict:
    s = build_state(cfg)
    g = s.grid
    b = MetricState(g)
    rp = ricci_potential(b)
    pp = cfg["flow"]["path_points"]
    reports = [energy_Ek(b, s.phi, k, rp, pp) for k in range(g.n + 1)]
    r1 = reports[1]
    failures = []
    pali = abs(r1.pali_residual) / (1.0 + abs(r1.Ek))
    if pali > 1e-6:
        failures.append(f"Pali identity residual {pali:.3e} exceeds 1e-6")
    if not r1.chain_ok(g.n):
        failures.append("I, J chain inequality fails")
    result = {"E0": r1.E0, "I": r1.I, "J": r1.J, "c_omega": rp.c_omega,
              "pali_residual": r1.pali_residual, "E": [r.Ek for r in reports],
              "Ek0": [r.Ek0 for r in reports], "J_k": [r.Jk for r in reports],
              "path_points": pp, "invariant_failures": failures}
    cols = ["k", "Ek0", "Jk", "Ek"]
    rows = [[r.k, r.Ek0, r.Jk, r.Ek] for r in reports]
    _emit(cfg, "energies", result, (cols, rows), "invariant_breach" if failures else "ok")
    if failures:
        raise InvariantBreach(failures)
    return result


def cmd_verify(cfg: RunConfig, stream=None) -> dict:
    stream = sys.stdout if stream is None else stream
    outcomes = run_suites(cfg)
    print(format_table(outcomes), file=stream)
    cols = ["suite", "check", "value", "limit", "relation", "passed"]
    rows = [ch.row() for o in outcomes for ch in o.checks]
    failed = [f"{o.suite}.{ch.name}" for o in outcomes for ch in o.checks if not ch.passed]
    errors = {o.suite: o.error for o in outcomes if o.error}
    result = {"suites": [o.suite for o in outcomes], "checks": len(rows),
              "failed": failed, "errors": errors, "backend": _kernels.backend()}
    status = "ok" if not failed and not errors else ("numerical_failure" if errors else "invariant_breach")
    _emit(cfg, "verify", result, (cols, rows), status)
    if errors:
        raise ArithmeticError("; ".join(f"{k}: {v}" for k, v in errors.items()))
    if failed:
        raise InvariantBreach(failed)
    return result


COMMANDS: dict[str, Callable] = {
    "flow": cmd_flow,
    "ma-path": cmd_ma_path,
    "spectrum": cmd_spectrum,
    "energies": cmd_energies,
    "verify": cmd_verify,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="krflab",
                                     description="Kahler-Ricci flow experiments on reduced geometries.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("flow", "run the normalized Kahler-Ricci flow"),
                            ("ma-path", "solve the Monge-Ampere continuity path"),
                            ("spectrum", "invariant Laplacian spectrum of the initial metric"),
                            ("energies", "energy functionals of the initial potential"),
                            ("verify", "run the property suites and print a pass/fail table")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="JSON configuration file")
        p.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
        p.add_argument("--seed", metavar="U64", type=int, help="base seed (overrides seed)")
        p.add_argument("--threads", metavar="K", type=int, help="worker threads (overrides threads)")
        if name == "flow":
            p.add_argument("--resume", metavar="CHECKPOINT", help="continue from a checkpoint file")
    return parser


def _failure(code: int, command: str, exc: BaseException, out_dir: str | None) -> int:
    record = {"command": command, "exit_code": code, "error": type(exc).__name__,
              "message": str(exc)}
    if isinstance(exc, ConfigError):
        record["field"] = exc.field
    if isinstance(exc, InvariantBreach):
        record["failures"] = exc.failures
    if isinstance(exc, ContinuationFailure):
        record["last_good_t"] = exc.last_t
    text = dumps(record)
    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "failure.json"), "w", encoding="utf-8") as fh:
                fh.write(text)
        except OSError:
            pass
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides: dict = {}
    if args.out is not None:
        overrides["output"] = {"directory": args.out}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    out_dir = args.out
    try:
        cfg = load_config(args.config, environ=os.environ, overrides=overrides)
        out_dir = cfg["output"]["directory"]
        with np.errstate(over="ignore", under="ignore"):
            if args.command == "flow":
                cmd_flow(cfg, resume=args.resume)
            else:
                COMMANDS[args.command](cfg)
    except ConfigError as exc:
        return _failure(EXIT_CONFIG, args.command, exc, None)
    except InvariantBreach as exc:
        return _failure(EXIT_INVARIANT, args.command, exc, out_dir)
    except NUMERICAL_ERRORS + (ArithmeticError,) as exc:
        return _failure(EXIT_NUMERICAL, args.command, exc, out_dir)
    except OSError as exc:
        return _failure(EXIT_IO, args.command, exc, None)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
