"""Command-line harness: experiment orchestration and persistent outputs.

Usage: lichtorus <mode> --config <path> [--out <dir>] [--seed <u64>] [--verbose]

Exit codes: 0 success, 2 config error, 3 solver failure, 4 BLOWUP verdict,
5 I/O error.  Artifacts are written through a ".partial" rename so partial
outputs are never listed in the report manifest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time

import numpy as np

from . import branch as branch_mod
from . import diagnostics as diag_mod
from . import mountain as mountain_mod
from .branch import (
    BracketError,
    IterationLimitError,
    MonotonicityError,
    NewtonError,
    NoSolutionError,
    SubsolutionError,
)
from .config import ConfigError, MODES, RunConfig, parse_config
from .core import (
    EigenSolverError,
    PositivityError,
    critical_spec,
    energy,
    linearized_potential,
    residual,
    smallest_eigenpair,
)
from .diagnostics import BubbleSpec, StructuralViolationError
from .fieldio import field_to_bytes
from .grid import KrylovError, NonCoerciveOperatorError
from .mountain import (
    BlowupDetectedError,
    DescentStallError,
    GeometryError,
    PathCollapseError,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_BLOWUP = 4
EXIT_IO = 5

SOLVER_ERRORS = (NoSolutionError, BracketError, IterationLimitError,
                 MonotonicityError, NewtonError, SubsolutionError,
                 EigenSolverError, KrylovError, NonCoerciveOperatorError,
                 PositivityError, DescentStallError, GeometryError,
                 PathCollapseError, StructuralViolationError, ValueError)


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


class OutputWriter:
    """Atomic artifact writer with a hash manifest."""

    def __init__(self, directory: str):
        self.directory = directory
        self.manifest: list[dict] = []
        os.makedirs(directory, exist_ok=True)

    def write_bytes(self, name: str, data: bytes):
        path = os.path.join(self.directory, name)
        partial = path + ".partial"
        with open(partial, "wb") as fh:
            fh.write(data)
        os.replace(partial, path)
        self.manifest.append({
            "name": name,
            "bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        })

    def write_csv(self, name: str, header: list[str], rows: list[list]):
        lines = [",".join(header)]
        lines += [",".join(_fmt(cell) for cell in row) for row in rows]
        self.write_bytes(name, ("\n".join(lines) + "\n").encode())


def _branch_rows(points) -> list[list]:
    return [[p.theta, p.lam, p.solution.min(), p.solution.max(), p.energy,
             p.iterations, p.converged] for p in points]

BRANCH_HEADER = ["theta", "lambda", "min_u", "max_u", "energy", "iterations",
                 "converged"]


def _run_solve(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    spec = critical_spec(coeffs, cfg.theta) if cfg.q is None else \
        critical_spec(coeffs, cfg.theta).at(q=cfg.q)
    sub = branch_mod.build_subsolution(coeffs, cfg.theta, q=spec.q)
    out = branch_mod.monotone_iterate(spec, sub, cfg.solver_config())
    if not out.converged:
        raise NoSolutionError(f"no solution at theta={cfg.theta} ({out.reason})")
    sol = out.solution
    eig = smallest_eigenpair(linearized_potential(spec, sol))
    quantities.update({
        "theta": cfg.theta, "iterations": out.iterations,
        "residual_norm": residual(spec, sol).sup_norm(),
        "min_u": sol.min(), "max_u": sol.max(),
        "energy": energy(spec, sol), "lambda": eig.lam,
    })
    if "field" in cfg.formats:
        writer.write_bytes("solution.field", field_to_bytes(sol))
    if "csv" in cfg.formats:
        writer.write_csv("branch.csv", BRANCH_HEADER, _branch_rows(
            [branch_mod.BranchPoint(cfg.theta, sol, eig.lam,
                                    energy(spec, sol), out.iterations, True)]))
    return EXIT_OK


def _run_branch(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    record = branch_mod.trace_branch(coeffs, cfg.theta_schedule,
                                     cfg.solver_config(), q=cfg.q)
    quantities.update({
        "n_points": len(record.points),
        "theta_first": record.points[0].theta,
        "theta_last": record.points[-1].theta,
        "lambda_min": min(p.lam for p in record.points),
        "monotonicity_violation": record.monotonicity_violation,
    })
    if "csv" in cfg.formats:
        writer.write_csv("branch.csv", BRANCH_HEADER, _branch_rows(record.points))
    if "field" in cfg.formats:
        writer.write_bytes("solution.field",
                           field_to_bytes(record.points[-1].solution))
    return EXIT_OK


def _run_fold(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    fold = branch_mod.find_theta_star(coeffs, theta_hint=cfg.theta_hint,
                                      tol=cfg.fold_tol, cfg=cfg.solver_config(),
                                      lambda_tol=cfg.lambda_tol)
    quantities.update({
        "theta_star": fold.theta_star,
        "bracket_lo": fold.bracket[0], "bracket_hi": fold.bracket[1],
        "lambda_last": fold.last_branch_point.lam,
        "bisection_steps": fold.bisection_steps,
        "refinement_steps": fold.refinement_steps,
    })
    if "csv" in cfg.formats:
        writer.write_csv("branch.csv", BRANCH_HEADER, _branch_rows(fold.accepted))
    if "field" in cfg.formats:
        writer.write_bytes("solution.field",
                           field_to_bytes(fold.last_branch_point.solution))
    return EXIT_OK


def _run_mountain_pass(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    pair = mountain_mod.critical_limit(coeffs, cfg.theta,
                                       eps_schedule=cfg.epsilon_schedule,
                                       q_schedule=cfg.q_schedule,
                                       cfg=cfg.mountain_config(),
                                       solver_cfg=cfg.solver_config())
    distinct = pair.separation >= 1e-3
    quantities.update({
        "theta": cfg.theta,
        "energy_minimal": pair.minimal.energy,
        "lambda_minimal": pair.minimal.lam,
        "eta": pair.eta,
        "pass_level": pair.pass_level,
        "second_energy": pair.second_energy,
        "separation": pair.separation,
        "distinct": distinct,
        "merged_within_tolerance": not distinct,
        "sup_differences": pair.sup_differences,
    })
    if "field" in cfg.formats:
        writer.write_bytes("minimal.field", field_to_bytes(pair.minimal_refined))
        writer.write_bytes("second.field", field_to_bytes(pair.second))
    if "csv" in cfg.formats:
        rows = [[i, lvl] for i, lvl in enumerate(pair.pass_history)]
        writer.write_csv("pass_levels.csv", ["stage", "pass_level"], rows)
    return EXIT_OK


def _run_certificate(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    cert = mountain_mod.certificate_theta1(coeffs)
    quantities.update({
        "n": cert.n, "C_n": cert.c_n,
        "S_h_estimate": cert.s_h_estimate, "heuristic": cert.heuristic,
        "t0": cert.t0, "t1": cert.t1, "phi_t0": cert.phi_t0,
        "theta1_lower_bound": cert.theta1_lower_bound,
    })
    if "field" in cfg.formats:
        writer.write_bytes("test_function.field", field_to_bytes(cert.test_function))
    return EXIT_OK


def _run_stability(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    perturbations = None
    if cfg.a_perturbations is not None:
        perturbations = [coeffs.a * amp for amp in cfg.a_perturbations]
    result = diag_mod.stability_experiment(coeffs, cfg.theta, cfg.q_schedule,
                                           perturbations, cfg.solver_config())
    quantities.update({
        "verdict": result.verdict,
        "n_members": len(result.members),
        "subsolution_floor": result.subsolution_floor,
        "final_diff": result.sup_differences[-1] if result.sup_differences else None,
    })
    if "csv" in cfg.formats:
        rows = []
        diffs = [None] + result.sup_differences
        for m, d in zip(result.members, diffs):
            rows.append([m.q, m.sup_u, m.min_u, m.mu, m.deviation,
                         "" if d is None else d, result.verdict])
        writer.write_csv("stability.csv",
                         ["q", "sup_u", "min_u", "mu", "deviation", "sup_diff",
                          "verdict"], rows)
    return EXIT_BLOWUP if result.verdict == "BLOWUP" else EXIT_OK


def _run_bubble(cfg: RunConfig, coeffs, writer: OutputWriter, quantities: dict, rng):
    spec = BubbleSpec(n=cfg.dim, f0=cfg.bubble_f0)
    h1 = spec.r0 / cfg.bubble_spacing_denominator
    _, rep1 = diag_mod.standard_bubble(spec, cfg.bubble_window, spacing=h1)
    _, rep2 = diag_mod.standard_bubble(spec, cfg.bubble_window, spacing=h1 / 2)
    ratio = rep1.max_rel_residual / rep2.max_rel_residual
    quantities.update({
        "f0": spec.f0, "r0": spec.r0, "spacing": rep1.spacing,
        "residual": rep1.max_rel_residual,
        "residual_half_spacing": rep2.max_rel_residual,
        "refinement_ratio": ratio,
    })
    if "csv" in cfg.formats:
        writer.write_csv("bubble.csv", ["spacing", "max_rel_residual"],
                         [[rep1.spacing, rep1.max_rel_residual],
                          [rep2.spacing, rep2.max_rel_residual]])
    return EXIT_OK


RUNNERS = {
    "solve": _run_solve,
    "branch": _run_branch,
    "fold": _run_fold,
    "mountain-pass": _run_mountain_pass,
    "certificate": _run_certificate,
    "stability-test": _run_stability,
    "bubble-check": _run_bubble,
}


def verify_manifest(out_dir: str) -> list[str]:
    """Check every manifest entry of a run report; returns mismatch messages."""
    with open(os.path.join(out_dir, "report.json"), "r", encoding="utf-8") as fh:
        report = json.load(fh)
    problems = []
    for entry in report.get("files", []):
        path = os.path.join(out_dir, entry["name"])
        if not os.path.exists(path):
            problems.append(f"{entry['name']}: missing")
            continue
        with open(path, "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        if digest != entry["sha256"]:
            problems.append(f"{entry['name']}: sha256 mismatch")
    return problems


def run(cfg: RunConfig, out_dir: str | None = None,
        seed: int | None = None) -> tuple[dict, int]:
    """Execute one configured run; returns (report, exit_code) and writes
    the artifacts plus report.json into the output directory."""
    if seed is not None:
        cfg.seed = seed
    if out_dir is not None:
        cfg.out_dir = out_dir
    rng = np.random.default_rng(cfg.seed)

    report = {
        "mode": cfg.mode,
        "seed": cfg.seed,
        "config": cfg.normalized(),
        "quantities": {},
        "timings": {},
        "files": [],
        "status": "failed",
    }
    try:
        coeffs = cfg.coefficients()
    except ValueError as exc:
        raise ConfigError(f"coefficients: {exc}") from exc

    writer = OutputWriter(cfg.out_dir)
    t0 = time.perf_counter()
    code = RUNNERS[cfg.mode](cfg, coeffs, writer, report["quantities"], rng)
    elapsed = time.perf_counter() - t0
    report["timings"][cfg.mode + "_seconds"] = elapsed
    report["timings"]["total_seconds"] = elapsed
    report["files"] = writer.manifest
    report["status"] = "blowup" if code == EXIT_BLOWUP else "ok"
    payload = json.dumps(report, indent=2, sort_keys=True, default=str).encode()
    writer_path = os.path.join(cfg.out_dir, "report.json")
    with open(writer_path + ".partial", "wb") as fh:
        fh.write(payload)
    os.replace(writer_path + ".partial", writer_path)
    return report, code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="lichtorus",
        description="Numerical laboratory for Lichnerowicz-type critical "
                    "elliptic equations on flat tori.")
    parser.add_argument("mode", choices=MODES)
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed override")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")

    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO

    if args.seed is not None and args.seed < 0:
        print("config error: --seed must be a nonnegative integer", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = parse_config(text)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.mode != args.mode:
        print(f"config error: mode: config says {cfg.mode!r} but the command "
              f"line says {args.mode!r}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        report, code = run(cfg, out_dir=args.out, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowupDetectedError as exc:
        print(f"blow-up detected: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO

    for key, val in sorted(report["quantities"].items()):
        print(f"{key} = {val}")
    print(f"report: {os.path.join(cfg.out_dir, 'report.json')}")
    return code


if __name__ == "__main__":
    sys.exit(main())
