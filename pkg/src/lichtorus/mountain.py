"""Second solutions: ball minimization, discrete mountain pass, continuation.

The second solution is produced at subcritical exponent q < 2* on the
regularized functional (epsilon > 0), then continued along epsilon -> 0 and
q -> 2* with warm starts, and finally Newton-refined on the true critical
equation.  The pass point is found by the classical discrete minimax scheme:
steepest-descent on the highest-energy point of a path joining the ball
minimizer to a low-energy far point, with arclength re-equispacing.

The explicit two-solution certificate evaluates the closed-form constants
C(n), t0, t1, Phi(t0) and a lower bound on the first multiplicity threshold
from the embedding-constant estimate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .branch import (
    BranchPoint,
    NewtonError,
    SolverConfig,
    build_subsolution,
    monotone_iterate,
    newton_refine,
    _branch_point,
)
from .core import (
    Coefficients,
    PositivityError,
    ProblemSpec,
    critical_exponent,
    critical_spec,
    energy,
    energy_gradient,
    sobolev_constant_estimate,
)
from .grid import (
    ScalarField,
    constant_field,
    cosine_field,
    h1h_inner,
    h1h_norm,
    helmholtz_solve,
)

log = logging.getLogger(__name__)


class GeometryError(RuntimeError):
    """Mountain-pass geometry violated (endpoints not below the barrier)."""


class PathCollapseError(RuntimeError):
    """The path's maximum-energy point reached an endpoint."""


class DescentStallError(RuntimeError):
    """Constrained descent stalled above the gradient tolerance."""


class BlowupDetectedError(RuntimeError):
    """The continuation family's sup norm grew without bound."""

    def __init__(self, message, records=None):
        super().__init__(message)
        self.records = records or []


@dataclass
class PathState:
    """Ordered fields from u_low to u_high with their energies."""

    points: list[ScalarField]
    energies: list[float]

    @property
    def max_index(self) -> int:
        return int(np.argmax(self.energies))


@dataclass
class TwoSolutions:
    minimal: BranchPoint
    second: ScalarField
    second_energy: float
    pass_level: float
    eta: float
    separation: float
    minimal_refined: ScalarField
    sup_differences: list[float] = field(default_factory=list)
    pass_history: list[float] = field(default_factory=list)


@dataclass
class Certificate:
    n: int
    c_n: float
    s_h_estimate: float
    heuristic: bool
    t0: float
    t1: float
    phi_t0: float
    theta1_lower_bound: float
    test_function: ScalarField


@dataclass
class MountainPassConfig:
    path_size: int = 33
    grad_tol: float = 1e-6
    max_sweeps: int = 20_000
    descent_grad_tol: float = 1e-8
    descent_max_iters: int = 5000
    newton_trigger: float = 1e-3
    sphere_samples: int = 64
    eta_margin: float = 0.01
    seed: int = 0
    ball_radius: float | None = None   # default: t0 from the certificate constants
    blowup_factor: float = 100.0


def _pow_rational(base: float, frac: Fraction) -> float:
    """base**frac with exact integer roots snapped (e.g. 8^(5/3) = 32)."""
    frac = Fraction(frac)
    if frac.denominator == 1:
        return float(base) ** frac.numerator
    if frac.denominator == 2:
        root = float(np.sqrt(base))
    elif frac.denominator == 3:
        root = float(np.cbrt(base))
    else:
        return float(base) ** float(frac)
    if round(root) ** frac.denominator == base:
        root = float(round(root))
    return root ** frac.numerator


def certificate_constant(n: int) -> float:
    """C(n) = (1/(n-2)) (2(n-1))^(-2*/2): 1/64, 1/72, 1/96 for n = 3, 4, 5."""
    if n not in (3, 4, 5):
        raise ValueError("n must be 3, 4 or 5")
    half_ts = Fraction(2 * n, n - 2) / 2
    return 1.0 / ((n - 2) * _pow_rational(2 * (n - 1), half_ts))


def certificate_theta1(coeffs: Coefficients, test_fn: ScalarField | None = None,
                       s_iterations: int = 200) -> Certificate:
    """Explicit lower bound on the two-solution threshold theta_1.

    Uses the heuristic embedding-constant estimate; an underestimate of S
    inflates the bound, hence the heuristic flag.
    """
    grid = coeffs.grid
    n = grid.dim
    ts = critical_exponent(n)
    s_est = sobolev_constant_estimate(coeffs.h, ts, iterations=s_iterations)
    max_f = float(np.abs(coeffs.f.values).max())

    c_n = certificate_constant(n)
    t0 = (s_est * max_f) ** (-1.0 / (ts - 2.0))
    t1 = (2.0 * (n - 1)) ** (-0.5) * t0
    phi_t0 = (s_est * max_f) ** (-(n - 2.0) / 2.0) / n

    if test_fn is None:
        phi = constant_field(grid, 1.0)
    else:
        if test_fn.min() <= 0:
            raise PositivityError("certificate test function must be strictly positive")
        phi = test_fn
    phi = phi * (1.0 / h1h_norm(phi, coeffs.h))

    denom = float(np.sum(coeffs.a.values * phi.values ** (-ts))) * grid.cell_volume
    theta1_lb = c_n * (s_est * max_f) ** (1.0 - n) / denom
    return Certificate(n=n, c_n=c_n, s_h_estimate=s_est, heuristic=True,
                       t0=t0, t1=t1, phi_t0=phi_t0,
                       theta1_lower_bound=theta1_lb, test_function=phi)


def _riesz(h: ScalarField, g: ScalarField) -> ScalarField:
    """H1_h representative of an L2 gradient: (Delta + h)^(-1) g."""
    return helmholtz_solve(h, g)


def minimize_in_ball(spec: ProblemSpec, center: ScalarField, radius: float,
                     cfg: MountainPassConfig | None = None,
                     start: ScalarField | None = None,
                     solver_cfg: SolverConfig | None = None) -> ScalarField:
    """Minimize the regularized energy on the H1_h-ball around center.

    Projected H1-preconditioned descent; after each step any excursion is
    rescaled back to the sphere.  Interior positive iterates are polished by
    Newton on the regularized Euler-Lagrange equation.
    """
    if spec.epsilon <= 0 or spec.q >= spec.two_star:
        raise ValueError("ball minimization requires epsilon > 0 and q < 2*")
    cfg = cfg or MountainPassConfig()
    h = spec.coefficients.h

    def project(u: ScalarField) -> ScalarField:
        dev = u - center
        r = h1h_norm(dev, h)
        if r > radius:
            return center + dev * (radius / r)
        return u

    def is_interior(u: ScalarField) -> bool:
        return h1h_norm(u - center, h) < radius * (1.0 - 1e-10)

    def constrained_direction(u: ScalarField) -> ScalarField:
        """Riesz descent direction, projected onto the sphere tangent when the
        iterate sits on the boundary and the direction points outward."""
        d = -1.0 * _riesz(h, energy_gradient(spec, u))
        dev = u - center
        r = h1h_norm(dev, h)
        if r >= radius * (1.0 - 1e-10):
            outward = h1h_inner(d, dev, h)
            if outward > 0:
                d = d - dev * (outward / r**2)
        return d

    u = project(start if start is not None else center)
    e_u = energy(spec, u)
    step = 1.0
    gn = np.inf
    # moves are capped at a small fraction of the ball so descent cannot
    # leap a ridge to lower ground outside the minimizer's basin
    max_move = 0.05 * radius
    for _ in range(cfg.descent_max_iters):
        d = constrained_direction(u)
        gn = h1h_norm(d, h)
        if gn <= cfg.descent_grad_tol:
            break
        if gn <= cfg.newton_trigger and is_interior(u) and u.min() > 0:
            try:
                cand = newton_refine(spec, u, solver_cfg)
            except NewtonError:
                pass
            else:
                if is_interior(cand):
                    return cand
        s = min(step, max_move / gn)
        improved = False
        for _ in range(50):
            cand = project(u + s * d)
            e_cand = energy(spec, cand)
            if e_cand < e_u - 1e-4 * s * gn**2:
                u, e_u, improved = cand, e_cand, True
                step = min(s * 2.0, 1e3)
                break
            s *= 0.5
        if not improved:
            raise DescentStallError(
                f"ball descent stalled with constrained gradient norm {gn:.3e}"
            )
    else:
        if gn > cfg.descent_grad_tol:
            raise DescentStallError(
                f"ball descent hit the iteration cap at gradient norm {gn:.3e}"
            )
    if is_interior(u) and u.min() > 0:
        try:
            cand = newton_refine(spec, u, solver_cfg)
            if is_interior(cand):
                u = cand
        except NewtonError:
            pass
    return u


def _sphere_samples(spec: ProblemSpec, center: ScalarField, radius: float,
                    count: int, rng: np.random.Generator) -> list[ScalarField]:
    """Positive-biased sample fields on the sphere around center."""
    grid = spec.grid
    h = spec.coefficients.h
    samples = []
    base = [constant_field(grid, 1.0), constant_field(grid, -1.0)]
    for axis in range(grid.dim):
        wv = [0] * grid.dim
        wv[axis] = 1
        base.append(constant_field(grid, 1.0) + 0.5 * cosine_field(grid, 1.0, wv))
    for raw in base:
        samples.append(center + raw * (radius / h1h_norm(raw, h)))
    while len(samples) < count:
        raw = constant_field(grid, float(rng.uniform(0.3, 1.0)))
        terms = rng.integers(1, 4)
        for _ in range(terms):
            wv = [int(k) for k in rng.integers(-2, 3, size=grid.dim)]
            if all(k == 0 for k in wv):
                continue
            amp = float(rng.uniform(-0.5, 0.5))
            phase = float(rng.uniform(0, 2 * np.pi))
            raw = raw + cosine_field(grid, amp, wv, phase)
        if raw.sup_norm() == 0:
            continue
        samples.append(center + raw * (radius / h1h_norm(raw, h)))
    return samples[:count]


def sphere_barrier(spec: ProblemSpec, center: ScalarField, radius: float,
                   cfg: MountainPassConfig, rng: np.random.Generator) -> float:
    """Sampled inf of the energy on the sphere, minus the safety margin.

    For epsilon = 0 only strictly positive samples are admissible; the rest
    have infinite energy and are skipped.
    """
    best = np.inf
    for s in _sphere_samples(spec, center, radius, cfg.sphere_samples, rng):
        if spec.epsilon <= 0 and s.min() <= 1e-10:
            continue
        val = energy(spec, s)
        best = min(best, val)
    if not np.isfinite(best):
        raise GeometryError("no admissible sphere sample; cannot estimate the barrier")
    return best - cfg.eta_margin * abs(best)


def _interpolate_path(points: list[ScalarField], energies_of, size: int,
                      h: ScalarField) -> PathState:
    """Re-equispace a polygonal path in H1_h arclength, endpoints fixed."""
    seg = [h1h_norm(b - a, h) for a, b in zip(points, points[1:])]
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0:
        raise PathCollapseError("path endpoints coincide")
    targets = np.linspace(0.0, total, size)
    out = [points[0]]
    j = 0
    for t in targets[1:-1]:
        while j < len(seg) - 1 and cum[j + 1] < t:
            j += 1
        frac = (t - cum[j]) / seg[j] if seg[j] > 0 else 0.0
        out.append(points[j] + frac * (points[j + 1] - points[j]))
    out.append(points[-1])
    return PathState(points=out, energies=[energies_of(p) for p in out])


def mountain_pass_solve(spec: ProblemSpec, u_low: ScalarField, u_high: ScalarField,
                        path_size: int | None = None,
                        cfg: MountainPassConfig | None = None,
                        eta: float | None = None,
                        sphere_center: ScalarField | None = None,
                        sphere_radius: float | None = None,
                        rng: np.random.Generator | None = None,
                        path_seed: ScalarField | None = None,
                        solver_cfg: SolverConfig | None = None):
    """Discrete mountain-pass between u_low and u_high.

    Returns (v, c_level): the Newton-refined pass point and its energy.
    Requires both endpoint energies below the sphere barrier eta.
    """
    cfg = cfg or MountainPassConfig()
    size = path_size or cfg.path_size
    if size < 5:
        raise ValueError("path_size must be at least 5")
    h = spec.coefficients.h
    rng = rng or np.random.default_rng(cfg.seed)

    if eta is None:
        if sphere_center is None or sphere_radius is None:
            raise ValueError("either eta or the sphere geometry must be given")
        eta = sphere_barrier(spec, sphere_center, sphere_radius, cfg, rng)

    e_low, e_high = energy(spec, u_low), energy(spec, u_high)
    if not (e_low < eta and e_high < eta):
        raise GeometryError(
            f"endpoints not below the barrier: I(low)={e_low:.6f}, "
            f"I(high)={e_high:.6f}, eta={eta:.6f}"
        )

    def efun(p):
        return energy(spec, p)

    knots = [u_low, u_high] if path_seed is None else [u_low, path_seed, u_high]
    path = _interpolate_path(knots, efun, size, h)

    # The max point's move is capped at one segment arclength per sweep so
    # the polygon never tears; re-equispacing keeps the discretization
    # uniform, pinning the maximum at the ridge until it settles on the
    # saddle (up to lattice resolution; Newton finishes the job).
    best_max = np.inf
    stall_sweeps = 0
    for sweep in range(cfg.max_sweeps):
        i = path.max_index
        if i == 0 or i == size - 1:
            raise PathCollapseError("maximum-energy point reached an endpoint")
        u = path.points[i]
        g = energy_gradient(spec, u)
        d = -1.0 * _riesz(h, g)
        gn = h1h_norm(d, h)
        if gn <= cfg.grad_tol:
            break
        seg = sum(h1h_norm(b - a, h) for a, b in
                  zip(path.points, path.points[1:])) / (size - 1)
        e_u = path.energies[i]
        s = seg / gn
        moved = False
        for _ in range(60):
            cand = u + s * d
            e_cand = efun(cand)
            if e_cand < e_u - 1e-4 * s * gn**2:
                path.points[i] = cand
                path.energies[i] = e_cand
                moved = True
                break
            s *= 0.5
        if not moved:
            raise DescentStallError(
                f"pass-point descent stalled at gradient norm {gn:.3e}"
            )
        path = _interpolate_path(path.points, efun, size, h)
        cur_max = max(path.energies)
        if cur_max < best_max - 1e-12 * max(1.0, abs(best_max)):
            best_max = cur_max
            stall_sweeps = 0
        else:
            stall_sweeps += 1
            if stall_sweeps >= 50:
                break  # lattice-resolution plateau; hand over to Newton
    else:
        raise DescentStallError(f"no pass point within {cfg.max_sweeps} sweeps")

    v = newton_refine(spec, path.points[path.max_index], solver_cfg)
    c_level = energy(spec, v)
    if c_level < eta - 1e-9 * max(1.0, abs(eta)):
        raise GeometryError(
            f"pass level {c_level:.8f} fell below the barrier eta={eta:.8f}"
        )
    return v, c_level


def _default_schedules(two_star: float):
    eps = [10.0 ** (-j) for j in range(1, 7)]
    qs = [two_star - 2.0 ** (-m) for m in range(1, 9)]
    return eps, qs


def build_far_endpoint(spec: ProblemSpec, eta: float,
                       min_distance: float, center: ScalarField) -> ScalarField:
    """T * psi with int f psi^(2*) > 0, T doubled until the energy drops
    below eta and the point leaves the ball."""
    coeffs = spec.coefficients
    grid = spec.grid
    ts = spec.two_star
    if coeffs.f.min() > 0:
        psi = constant_field(grid, 1.0)
    else:
        fv = coeffs.f.values
        span = fv.max() - fv.min()
        psi = ScalarField(grid, (fv - fv.min()) / span + 0.1)
    weight = float(np.sum(coeffs.f.values * psi.values**ts)) * grid.cell_volume
    if weight <= 0:
        raise GeometryError("could not build psi with int f psi^(2*) > 0")
    t = 1.0
    h = coeffs.h
    for _ in range(80):
        cand = t * psi
        if (energy(spec, cand) < eta
                and h1h_norm(cand - center, h) > min_distance):
            return cand
        t *= 2.0
    raise GeometryError("far endpoint: energy did not drop below eta")


def critical_limit(coeffs: Coefficients, theta: float,
                   eps_schedule=None, q_schedule=None,
                   cfg: MountainPassConfig | None = None,
                   solver_cfg: SolverConfig | None = None) -> TwoSolutions:
    """Two solutions of the critical equation at the given theta.

    Runs ball minimization + mountain pass through the epsilon schedule at
    the first subcritical q, then up the q schedule at the final epsilon,
    warm-starting both family members, and Newton-refines the pair on the
    true critical equation (epsilon = 0, q = 2*).
    """
    cfg = cfg or MountainPassConfig()
    solver_cfg = solver_cfg or SolverConfig()
    grid = coeffs.grid
    ts = critical_exponent(grid.dim)
    eps_default, qs_default = _default_schedules(ts)
    eps_schedule = list(eps_schedule) if eps_schedule is not None else eps_default
    q_schedule = list(q_schedule) if q_schedule is not None else qs_default
    if any(e2 >= e1 for e1, e2 in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")
    if any(b <= a for a, b in zip(q_schedule, q_schedule[1:])) or q_schedule[-1] > ts:
        raise ValueError("q schedule must be strictly increasing and <= 2*")

    rng = np.random.default_rng(cfg.seed)

    # Minimal solution at the critical equation: the reference branch point.
    sub = build_subsolution(coeffs, theta)
    out = monotone_iterate(critical_spec(coeffs, theta), sub, solver_cfg)
    if not out.converged:
        raise BlowupDetectedError(
            f"no minimal solution at theta={theta}: {out.reason}")
    minimal_bp = _branch_point(coeffs, theta, out.solution, out.iterations)

    # Ball geometry from the certificate constants (zero-centered).
    if cfg.ball_radius is not None:
        radius = cfg.ball_radius
    else:
        s_est = sobolev_constant_estimate(coeffs.h, ts, iterations=100)
        max_f = float(np.abs(coeffs.f.values).max())
        radius = (s_est * max_f) ** (-1.0 / (ts - 2.0))
    center = constant_field(grid, 0.0)
    h = coeffs.h
    phi_norm = h1h_norm(minimal_bp.solution, h)
    if phi_norm >= radius:
        raise GeometryError(
            f"minimal solution (H1_h norm {phi_norm:.4f}) lies outside the "
            f"ball of radius {radius:.4f}; override ball_radius"
        )

    stages = [(e, q_schedule[0]) for e in eps_schedule]
    stages += [(eps_schedule[-1], q) for q in q_schedule[1:]]

    u_low = minimal_bp.solution
    v = None
    sup0 = u_low.max()
    low_diffs, pass_history = [], []
    prev_low = None
    q_phase_start = len(eps_schedule) - 1  # diffs recorded across the q ascent
    for stage_idx, (eps, q) in enumerate(stages):
        spec = ProblemSpec(coeffs, q, theta=theta, epsilon=eps)
        eta = sphere_barrier(spec, center, radius, cfg, rng)
        u_low = minimize_in_ball(spec, center, radius, cfg, start=u_low,
                                 solver_cfg=solver_cfg)
        u_high = build_far_endpoint(spec, eta, radius, center)
        if energy(spec, u_low) >= eta:
            raise GeometryError(
                f"ball minimum not below the barrier at (eps={eps}, q={q})"
            )
        v, c_level = mountain_pass_solve(
            spec, u_low, u_high, cfg.path_size, cfg, eta=eta,
            rng=rng, path_seed=v, solver_cfg=solver_cfg)
        pass_history.append(c_level)
        if prev_low is not None and stage_idx > q_phase_start:
            low_diffs.append(float(np.abs(u_low.values - prev_low.values).max()))
        prev_low = u_low
        if max(u_low.max(), v.max()) > cfg.blowup_factor * max(1.0, sup0):
            raise BlowupDetectedError(
                f"family sup norm exploded at (eps={eps}, q={q})",
                records=[(eps, q, u_low.max(), v.max())])
        log.debug("stage eps=%.1e q=%.6f: I(low)=%.8f c=%.8f", eps, q,
                  energy(spec, u_low), c_level)

    # Final refinement on the true critical equation.
    crit = critical_spec(coeffs, theta)
    if u_low.min() <= 0:
        raise PositivityError("continued minimizer lost positivity before the limit")
    u_star = newton_refine(crit, u_low, solver_cfg)
    v_star = newton_refine(crit, v, solver_cfg)
    eta_crit = sphere_barrier(crit, center, radius, cfg, rng)
    e_min, e_second = energy(crit, u_star), energy(crit, v_star)
    if not (e_min < eta_crit <= e_second + 1e-9):
        raise GeometryError(
            f"energy ordering violated: I(min)={e_min:.8f}, eta={eta_crit:.8f}, "
            f"I(second)={e_second:.8f}"
        )
    separation = float(np.abs(u_star.values - v_star.values).max())
    return TwoSolutions(minimal=minimal_bp, second=v_star,
                        second_energy=e_second, pass_level=e_second,
                        eta=eta_crit, separation=separation,
                        minimal_refined=u_star,
                        sup_differences=low_diffs, pass_history=pass_history)
