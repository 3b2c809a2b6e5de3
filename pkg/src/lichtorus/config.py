"""Run configuration: strict JSON parsing and construction of problem objects.

Configs are JSON with the blocks documented in the README: mode, grid,
coefficients (constant plus truncated cosine series), parameters, solver and
output.  Validation is strict: unknown keys are errors, every violation is
reported with its key path, and defaults are materialized into the
normalized echo so a run is reproducible from the report alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .branch import SolverConfig
from .core import Coefficients, critical_exponent
from .grid import ScalarField, TorusGrid, build_grid, constant_field, cosine_field
from .mountain import MountainPassConfig

MODES = ("solve", "branch", "fold", "mountain-pass", "certificate",
         "stability-test", "bubble-check")


class ConfigError(ValueError):
    """Invalid configuration, with the offending key path in the message."""


@dataclass
class CosineTerm:
    amplitude: float
    wavevector: tuple[int, ...]
    phase: float = 0.0


@dataclass
class CoefficientSpec:
    constant: float
    cosines: list[CosineTerm] = field(default_factory=list)

    def build(self, grid: TorusGrid) -> ScalarField:
        out = constant_field(grid, self.constant)
        for term in self.cosines:
            out = out + cosine_field(grid, term.amplitude, term.wavevector, term.phase)
        return out


@dataclass
class RunConfig:
    mode: str
    dim: int
    resolutions: list[int]
    periods: list[float]
    h: CoefficientSpec
    f: CoefficientSpec
    a: CoefficientSpec
    theta: float | None
    theta_hint: float
    theta_schedule: list[float] | None
    q: float | None
    q_schedule: list[float] | None
    epsilon_schedule: list[float] | None
    a_perturbations: list[float] | None
    fold_tol: float
    lambda_tol: float
    tol: float
    max_iters: int
    cap: float | None
    path_size: int
    ball_radius: float | None
    bubble_f0: float
    bubble_window: float
    bubble_spacing_denominator: int
    out_dir: str
    formats: list[str]
    seed: int

    def grid(self) -> TorusGrid:
        return build_grid(self.dim, self.resolutions, self.periods)

    def coefficients(self) -> Coefficients:
        grid = self.grid()
        return Coefficients(self.h.build(grid), self.f.build(grid), self.a.build(grid))

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iters=self.max_iters, cap=self.cap)

    def mountain_config(self) -> MountainPassConfig:
        return MountainPassConfig(path_size=self.path_size, seed=self.seed,
                                  ball_radius=self.ball_radius)

    def normalized(self) -> dict:
        """Echo with all defaults materialized (JSON-serializable)."""
        coeff = lambda c: {
            "constant": c.constant,
            "cosines": [{"amplitude": t.amplitude, "wavevector": list(t.wavevector),
                         "phase": t.phase} for t in c.cosines],
        }
        return {
            "mode": self.mode,
            "grid": {"dim": self.dim, "resolutions": self.resolutions,
                     "periods": self.periods},
            "coefficients": {"h": coeff(self.h), "f": coeff(self.f), "a": coeff(self.a)},
            "parameters": {
                "theta": self.theta, "theta_hint": self.theta_hint,
                "theta_schedule": self.theta_schedule, "q": self.q,
                "q_schedule": self.q_schedule,
                "epsilon_schedule": self.epsilon_schedule,
                "a_perturbations": self.a_perturbations,
            },
            "solver": {"fold_tol": self.fold_tol, "lambda_tol": self.lambda_tol,
                       "tol": self.tol, "max_iters": self.max_iters,
                       "cap": self.cap, "path_size": self.path_size,
                       "ball_radius": self.ball_radius,
                       "bubble_f0": self.bubble_f0,
                       "bubble_window": self.bubble_window,
                       "bubble_spacing_denominator": self.bubble_spacing_denominator},
            "output": {"directory": self.out_dir, "formats": self.formats},
            "seed": self.seed,
        }


def _require_keys(obj: dict, allowed: set[str], path: str):
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def _get(obj: dict, key: str, kind, path: str, default=None, required=False):
    if key not in obj or obj[key] is None:
        if required:
            raise ConfigError(f"{path}.{key}: required key missing")
        return default
    val = obj[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(f"{path}.{key}: expected {kind.__name__}, got {type(val).__name__}")
    return val


def _parse_coefficient(obj, dim: int, path: str) -> CoefficientSpec:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    _require_keys(obj, {"constant", "cosines"}, path)
    constant = _get(obj, "constant", float, path, required=True)
    cosines = []
    for i, term in enumerate(obj.get("cosines") or []):
        tpath = f"{path}.cosines[{i}]"
        if not isinstance(term, dict):
            raise ConfigError(f"{tpath}: expected an object")
        _require_keys(term, {"amplitude", "wavevector", "phase"}, tpath)
        amp = _get(term, "amplitude", float, tpath, required=True)
        wv = term.get("wavevector")
        if (not isinstance(wv, list) or len(wv) != dim
                or not all(isinstance(k, int) and not isinstance(k, bool) for k in wv)):
            raise ConfigError(f"{tpath}.wavevector: expected {dim} integers")
        phase = _get(term, "phase", float, tpath, default=0.0)
        cosines.append(CosineTerm(amplitude=amp, wavevector=tuple(wv), phase=phase))
    return CoefficientSpec(constant=constant, cosines=cosines)


def _check_schedule(seq, path: str, increasing: bool):
    if seq is None:
        return None
    if not isinstance(seq, list) or not seq:
        raise ConfigError(f"{path}: expected a nonempty list")
    vals = []
    for i, v in enumerate(seq):
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise ConfigError(f"{path}[{i}]: expected a number")
        vals.append(float(v))
    pairs = zip(vals, vals[1:])
    if increasing and any(b <= a for a, b in pairs):
        raise ConfigError(f"{path}: schedule must be strictly increasing")
    if not increasing and any(b >= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{path}: schedule must be strictly decreasing")
    return vals


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON config; raises ConfigError on any problem."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config syntax error at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected an object")
    _require_keys(raw, {"mode", "grid", "coefficients", "parameters",
                        "solver", "output", "seed"}, "top level")

    mode = _get(raw, "mode", str, "top level", required=True)
    if mode not in MODES:
        raise ConfigError(f"mode: unknown mode {mode!r} (choose from {', '.join(MODES)})")

    grid_obj = raw.get("grid")
    if not isinstance(grid_obj, dict):
        raise ConfigError("grid: required block missing")
    _require_keys(grid_obj, {"dim", "resolutions", "periods"}, "grid")
    dim = _get(grid_obj, "dim", int, "grid", required=True)
    if dim not in (3, 4, 5):
        raise ConfigError(f"grid.dim: dimension out of range: {dim}")
    resolutions = grid_obj.get("resolutions")
    if not isinstance(resolutions, list) or len(resolutions) != dim:
        raise ConfigError(f"grid.resolutions: expected {dim} entries")
    for i, n in enumerate(resolutions):
        if not isinstance(n, int) or isinstance(n, bool) or n < 4 or n % 2:
            raise ConfigError(f"grid.resolutions[{i}]: must be an even integer >= 4")
    periods = grid_obj.get("periods")
    if not isinstance(periods, list) or len(periods) != dim:
        raise ConfigError(f"grid.periods: expected {dim} entries")
    pvals = []
    for i, p in enumerate(periods):
        if isinstance(p, bool) or not isinstance(p, (int, float)) or p <= 0:
            raise ConfigError(f"grid.periods[{i}]: must be a positive number")
        pvals.append(float(p))

    coeff_obj = raw.get("coefficients")
    if not isinstance(coeff_obj, dict):
        raise ConfigError("coefficients: required block missing")
    _require_keys(coeff_obj, {"h", "f", "a"}, "coefficients")
    for name in ("h", "f", "a"):
        if name not in coeff_obj:
            raise ConfigError(f"coefficients.{name}: required key missing")
    h = _parse_coefficient(coeff_obj["h"], dim, "coefficients.h")
    f = _parse_coefficient(coeff_obj["f"], dim, "coefficients.f")
    a = _parse_coefficient(coeff_obj["a"], dim, "coefficients.a")

    par = raw.get("parameters") or {}
    if not isinstance(par, dict):
        raise ConfigError("parameters: expected an object")
    _require_keys(par, {"theta", "theta_hint", "theta_schedule", "q", "q_schedule",
                        "epsilon_schedule", "a_perturbations"}, "parameters")
    theta = _get(par, "theta", float, "parameters")
    if theta is not None and theta < 0:
        raise ConfigError("parameters.theta: must be >= 0")
    theta_hint = _get(par, "theta_hint", float, "parameters", default=0.1)
    if theta_hint <= 0:
        raise ConfigError("parameters.theta_hint: must be positive")
    theta_schedule = _check_schedule(par.get("theta_schedule"),
                                     "parameters.theta_schedule", increasing=True)
    q = _get(par, "q", float, "parameters")
    ts = critical_exponent(dim)
    if q is not None and not (2.0 <= q <= ts + 1e-12):
        raise ConfigError(f"parameters.q: must lie in [2, {ts}]")
    q_schedule = _check_schedule(par.get("q_schedule"), "parameters.q_schedule",
                                 increasing=True)
    if q_schedule and q_schedule[-1] > ts + 1e-12:
        raise ConfigError(f"parameters.q_schedule: entries must be <= 2* = {ts}")
    epsilon_schedule = _check_schedule(par.get("epsilon_schedule"),
                                       "parameters.epsilon_schedule", increasing=False)
    if epsilon_schedule and epsilon_schedule[-1] <= 0:
        raise ConfigError("parameters.epsilon_schedule: entries must be positive")
    a_perturbations = par.get("a_perturbations")
    if a_perturbations is not None:
        if not isinstance(a_perturbations, list):
            raise ConfigError("parameters.a_perturbations: expected a list of numbers")
        for i, v in enumerate(a_perturbations):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"parameters.a_perturbations[{i}]: expected a number")
            if v <= -1.0:
                raise ConfigError(
                    f"parameters.a_perturbations[{i}]: relative bump must be > -1 "
                    "(a stays nonnegative)")
        a_perturbations = [float(v) for v in a_perturbations]

    sol = raw.get("solver") or {}
    if not isinstance(sol, dict):
        raise ConfigError("solver: expected an object")
    _require_keys(sol, {"fold_tol", "lambda_tol", "tol", "max_iters", "cap",
                        "path_size", "ball_radius", "bubble_f0", "bubble_window",
                        "bubble_spacing_denominator"}, "solver")
    fold_tol = _get(sol, "fold_tol", float, "solver", default=1e-4)
    lambda_tol = _get(sol, "lambda_tol", float, "solver", default=1e-4)
    tol = _get(sol, "tol", float, "solver", default=1e-8)
    for name, val in (("fold_tol", fold_tol), ("lambda_tol", lambda_tol), ("tol", tol)):
        if val <= 0:
            raise ConfigError(f"solver.{name}: tolerance must be positive")
    max_iters = _get(sol, "max_iters", int, "solver", default=200_000)
    if max_iters < 1:
        raise ConfigError("solver.max_iters: must be >= 1")
    cap = _get(sol, "cap", float, "solver")
    path_size = _get(sol, "path_size", int, "solver", default=33)
    if path_size < 5:
        raise ConfigError("solver.path_size: must be >= 5")
    ball_radius = _get(sol, "ball_radius", float, "solver")
    bubble_f0 = _get(sol, "bubble_f0", float, "solver", default=float(dim * (dim - 2)))
    if bubble_f0 <= 0:
        raise ConfigError("solver.bubble_f0: must be positive")
    bubble_window = _get(sol, "bubble_window", float, "solver", default=0.5)
    if bubble_window <= 0:
        raise ConfigError("solver.bubble_window: must be positive")
    bubble_den = _get(sol, "bubble_spacing_denominator", int, "solver", default=64)
    if bubble_den < 8:
        raise ConfigError("solver.bubble_spacing_denominator: must be >= 8")

    out = raw.get("output") or {}
    if not isinstance(out, dict):
        raise ConfigError("output: expected an object")
    _require_keys(out, {"directory", "formats"}, "output")
    out_dir = _get(out, "directory", str, "output", default="out")
    formats = out.get("formats", ["csv", "field"])
    if (not isinstance(formats, list)
            or any(fmt not in ("csv", "field") for fmt in formats)):
        raise ConfigError("output.formats: entries must be 'csv' or 'field'")

    seed = _get(raw, "seed", int, "top level", default=0)
    if seed < 0:
        raise ConfigError("seed: must be a nonnegative integer")

    cfg = RunConfig(mode=mode, dim=dim, resolutions=list(resolutions),
                    periods=pvals, h=h, f=f, a=a, theta=theta,
                    theta_hint=theta_hint, theta_schedule=theta_schedule,
                    q=q, q_schedule=q_schedule, epsilon_schedule=epsilon_schedule,
                    a_perturbations=a_perturbations, fold_tol=fold_tol,
                    lambda_tol=lambda_tol, tol=tol, max_iters=max_iters, cap=cap,
                    path_size=path_size, ball_radius=ball_radius,
                    bubble_f0=bubble_f0, bubble_window=bubble_window,
                    bubble_spacing_denominator=bubble_den, out_dir=out_dir,
                    formats=list(formats), seed=seed)
    _check_mode_requirements(cfg)
    return cfg


def _check_mode_requirements(cfg: RunConfig):
    need_theta = {"solve", "mountain-pass", "stability-test"}
    if cfg.mode in need_theta and cfg.theta is None:
        raise ConfigError(f"parameters.theta: required for mode {cfg.mode!r}")
    if cfg.mode == "branch" and not cfg.theta_schedule:
        raise ConfigError("parameters.theta_schedule: required for mode 'branch'")
    if cfg.mode == "stability-test" and not cfg.q_schedule:
        raise ConfigError("parameters.q_schedule: required for mode 'stability-test'")
    if (cfg.mode == "stability-test" and cfg.a_perturbations is not None
            and len(cfg.a_perturbations) != len(cfg.q_schedule)):
        raise ConfigError("parameters.a_perturbations: length must match q_schedule")
