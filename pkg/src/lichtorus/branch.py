"""Minimal solutions by monotone iteration, fold location, branch tracing.

The minimal solution is constructed by the sub/supersolution scheme: starting
from a strict subsolution w, iterate v <- (Delta + K)^(-1)(F(., v) + K v) with
F(x, u) = f u^(q-1) + theta a u^(-(q+1)) - h u and K large enough that
F + K id is nonnegative and nondecreasing on the current range.  Iterates are
pointwise nondecreasing; they converge to the smallest positive solution or
grow without bound when none exists.  The fold theta_star is bracketed by
bisection on that existence dichotomy and polished by a secant iteration that
drives the first eigenvalue of the linearization to zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .core import (
    Coefficients,
    POSITIVITY_FLOOR,
    PositivityError,
    ProblemSpec,
    critical_spec,
    energy,
    energy_gradient,
    linearized_potential,
    regularized_potential,
    residual,
    smallest_eigenpair,
)
from .grid import ScalarField, helmholtz_solve

log = logging.getLogger(__name__)


class SubsolutionError(RuntimeError):
    """Failed to construct a strict subsolution."""


class MonotonicityError(RuntimeError):
    """An iterate decreased beyond tolerance: bug or insufficient K."""


class IterationLimitError(RuntimeError):
    """Iteration cap reached without a convergence or divergence verdict."""


class NewtonError(RuntimeError):
    """Newton refinement failed (singular Jacobian or no acceptable step)."""


class NoSolutionError(RuntimeError):
    """No solution exists even at the smallest probed theta."""


class BracketError(RuntimeError):
    """Could not bracket the fold within the expansion cap."""


@dataclass(frozen=True)
class Subsolution:
    """A strict subsolution w = t * psi_delta with its construction data.

    shift_k is the K0 >= 0 used so that h + K0 >= 1 in the linear solve.
    """

    field: ScalarField
    delta: float
    scale: float
    shift_k: float


@dataclass
class SolverConfig:
    """Knobs for the monotone iteration and Newton refinement."""

    tol: float = 1e-8                 # sup-norm step size declaring convergence
    max_iters: int = 200_000
    cap: float | None = None          # divergence cap; default 1e6 x initial sup
    growth_window: int = 50
    monotonicity_tol: float = 1e-12
    newton_polish: bool = True
    newton_trigger: float = 0.0       # attempt Newton early once step <= trigger
    newton_res_tol: float = 1e-10
    newton_max_steps: int = 40


@dataclass
class MonotoneResult:
    converged: bool
    solution: ScalarField | None
    iterations: int
    final_step: float
    sup_final: float
    max_violation: float
    residual_norm: float | None
    polished: bool
    reason: str


@dataclass
class BranchPoint:
    theta: float
    solution: ScalarField
    lam: float
    energy: float
    iterations: int
    converged: bool


@dataclass
class BranchRecord:
    points: list[BranchPoint] = field(default_factory=list)
    monotonicity_violation: float = 0.0

    @property
    def thetas(self) -> list[float]:
        return [p.theta for p in self.points]


@dataclass
class FoldResult:
    theta_star: float
    bracket: tuple[float, float]
    last_branch_point: BranchPoint
    bisection_steps: int
    refinement_steps: int
    accepted: list[BranchPoint]


def build_subsolution(coeffs: Coefficients, theta: float, q: float | None = None,
                      max_halvings: int = 60) -> Subsolution:
    """Strict subsolution w = t * psi_delta at the given (theta, q).

    psi_delta solves (Delta + H) psi = a - delta f^- - delta with
    H = h + K0 >= 1; delta halves from 1 until psi is positive, then the
    scale t is chosen so that every smaller scale is a strict subsolution
    too, which places w under every positive solution.
    """
    grid = coeffs.grid
    if coeffs.a.max() <= 0:
        raise SubsolutionError("a vanishes identically; no positive subsolution")
    spec = critical_spec(coeffs, theta) if q is None else \
        ProblemSpec(coeffs, q, theta=theta, epsilon=0.0)

    k0 = max(0.0, 1.0 - coeffs.h.min())
    bigh = coeffs.h + k0
    f_minus = ScalarField(grid, np.maximum(-coeffs.f.values, 0.0))

    delta = 1.0
    psi = None
    for _ in range(max_halvings + 1):
        rhs = coeffs.a - delta * f_minus - delta
        cand = helmholtz_solve(bigh, rhs)
        if cand.min() > 0:
            psi = cand
            break
        delta *= 0.5
    if psi is None:
        raise SubsolutionError(
            f"psi_delta not positive after {max_halvings} delta halvings"
        )

    # w must lie under EVERY solution, which the touching-point argument
    # guarantees only when t' * psi is a strict subsolution for all t' <= t.
    # The scaled residual is, pointwise,
    #   r(t') = t' * (a - delta f^- - delta - K0 psi)
    #           - f (t' psi)^(q-1) - theta a (t' psi)^(-(q+1)),
    # so we scan a log grid of scales and take the largest one whose whole
    # tail is strictly negative (solution pairs narrower than the 2% scan
    # step can only hide very near the fold, where callers warm-start).
    base = (coeffs.a - delta * f_minus - delta - k0 * psi).values
    fpow = coeffs.f.values * psi.values ** (spec.q - 1.0)
    apow = theta * coeffs.a.values * psi.values ** (-(spec.q + 1.0))
    per_octave = 32
    scales = 2.0 ** (-np.arange(60 * per_octave + 1) / per_octave)
    floor = 10 * POSITIVITY_FLOOR / psi.min()
    best = None
    for t in scales[::-1]:  # ascend from the smallest scale
        if t < floor:
            continue
        r_max = (t * base - t ** (spec.q - 1.0) * fpow
                 - t ** (-(spec.q + 1.0)) * apow).max()
        if r_max < 0:
            best = t
        else:
            break
    if best is None:
        raise SubsolutionError(
            f"no strict subsolution found at theta={theta} within the scale scan"
        )
    w = best * psi
    res = residual(spec, w)
    if res.max() >= 0:
        raise SubsolutionError(
            f"scaled candidate lost strict negativity (max residual {res.max():.3e})"
        )
    return Subsolution(field=w, delta=delta, scale=float(best), shift_k=k0)


def _solve_symmetric(w: ScalarField, rhs: ScalarField, rtol: float = 1e-12,
                     maxiter: int = 3000) -> ScalarField:
    """Solve (Delta + W) x = rhs for symmetric, possibly indefinite W via MINRES."""
    grid = w.grid
    wv = w.values
    mult = grid._lap_multiplier
    shape = grid.resolutions
    axes_order = grid._axes_order
    n = grid.npoints

    def matvec(x):
        xr = x.reshape(shape)
        ax = np.fft.irfftn(mult * np.fft.rfftn(xr), s=shape, axes=axes_order) + wv * xr
        return ax.ravel()

    c0 = max(1.0, abs(float(wv.mean())))

    def precond(x):
        xr = x.reshape(shape)
        return np.fft.irfftn(np.fft.rfftn(xr) / (mult + c0), s=shape, axes=axes_order).ravel()

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    pre = LinearOperator((n, n), matvec=precond, dtype=np.float64)
    b = rhs.values.ravel()
    x, info = minres(op, b, rtol=rtol, maxiter=maxiter, M=pre)
    resid = np.linalg.norm(matvec(x) - b)
    bn = np.linalg.norm(b)
    if info != 0 or (bn > 0 and resid > 1e-6 * bn):
        raise NewtonError(
            f"linearized solve failed (minres info={info}, rel residual={resid / max(bn, 1e-300):.3e}); "
            "Jacobian singular or nearly so"
        )
    return ScalarField(grid, x.reshape(shape))


def newton_refine(spec: ProblemSpec, u0: ScalarField,
                  cfg: SolverConfig | None = None) -> ScalarField:
    """Damped Newton on the residual, Jacobian = Delta + W(u).

    Handles both the unregularized equation (epsilon = 0, positivity enforced
    by step halving) and the regularized one (epsilon > 0, any sign).
    """
    cfg = cfg or SolverConfig()
    if spec.epsilon > 0:
        res_fn, pot_fn = energy_gradient, regularized_potential
        positivity = False
    else:
        res_fn, pot_fn = residual, linearized_potential
        positivity = True

    u = u0
    r = res_fn(spec, u)
    rn = r.sup_norm()
    for _ in range(cfg.newton_max_steps):
        if rn <= cfg.newton_res_tol:
            return u
        w = pot_fn(spec, u)
        step = _solve_symmetric(w, -r)
        alpha = 1.0
        accepted = False
        while alpha >= 1e-8:
            cand = u + alpha * step
            if positivity and cand.min() <= 10 * POSITIVITY_FLOOR:
                alpha *= 0.5
                continue
            cand_r = res_fn(spec, cand)
            if cand_r.sup_norm() <= (1.0 - 0.25 * alpha) * rn:
                u, r, rn = cand, cand_r, cand_r.sup_norm()
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            raise NewtonError(f"no acceptable Newton step (residual {rn:.3e})")
    if rn <= cfg.newton_res_tol:
        return u
    raise NewtonError(f"Newton did not reach residual tolerance (final {rn:.3e})")


def _bound_constant(spec: ProblemSpec, floor: float, sup: float) -> float:
    """K such that F + K id is nonnegative and nondecreasing on [floor, sup].

    Callers pass the current iterate's range with headroom on the sup: one
    iteration step grows the sup by at most 1 + 1/(q-1) + 1/(q+1) < 1.3 when
    K satisfies this bound, so the range covers the next comparison too.
    """
    c = spec.coefficients
    q = spec.q
    bound = (np.abs(c.h.values)
             + (q - 1.0) * np.abs(c.f.values) * sup ** (q - 2.0)
             + (q + 1.0) * spec.theta * c.a.values * floor ** (-(q + 2.0)))
    return float(bound.max()) + 1.0


def monotone_iterate(spec: ProblemSpec, start: Subsolution | ScalarField,
                     cfg: SolverConfig | None = None) -> MonotoneResult:
    """Monotone sub/supersolution iteration from a (strict) subsolution.

    Accepts either a constructed Subsolution or a warm-start field that is a
    subsolution at spec's theta (e.g. a minimal solution at a smaller theta).
    Returns Converged with the Newton-polished solution, or Diverged when the
    iterates blow past the cap / keep growing at the iteration limit.
    """
    cfg = cfg or SolverConfig()
    if isinstance(start, Subsolution):
        v = start.field
    else:
        v = start
        r = residual(spec, v)
        if r.max() > 1e-9:
            raise SubsolutionError(
                f"warm start is not a subsolution at theta={spec.theta} "
                f"(max residual {r.max():.3e})"
            )
    if v.min() <= POSITIVITY_FLOOR:
        raise PositivityError("subsolution must be strictly positive")

    c = spec.coefficients
    q = spec.q
    sup0 = v.max()
    cap = cfg.cap if cfg.cap is not None else 1e6 * sup0
    sup_history = [sup0]
    max_violation = 0.0
    newton_trigger = cfg.newton_trigger
    step = np.inf

    for it in range(1, cfg.max_iters + 1):
        # iterates are nondecreasing, so the current min is a valid floor for
        # this step's comparison range; 1.3x headroom covers the next sup
        k = _bound_constant(spec, v.min(), 1.3 * v.max())
        vv = v.values
        f_of_v = (c.f.values * vv ** (q - 1.0)
                  + spec.theta * c.a.values * vv ** (-(q + 1.0))
                  - c.h.values * vv)
        rhs = ScalarField(v.grid, f_of_v + k * vv)
        v_new = helmholtz_solve(k, rhs)

        # spectral roundoff is global, so the comparison noise floor scales
        # with the field sup; normalize before checking the 1e-12 discipline
        violation = float((v.values - v_new.values).max()) / max(1.0, v.max())
        if violation > cfg.monotonicity_tol:
            # blow-up concentrates the iterate beyond what the grid resolves,
            # and spectral ringing then breaks pointwise monotonicity; under
            # clear sustained growth that IS the divergence verdict
            window = min(cfg.growth_window, len(sup_history) - 1)
            growing = (window > 0
                       and v.max() >= 4.0 * sup0
                       and all(b > a for a, b in
                               zip(sup_history[-window - 1:], sup_history[-window:])))
            if growing:
                return MonotoneResult(False, None, it, step, v.max(),
                                      max_violation, None, False,
                                      "monotonicity lost in under-resolved growth")
            raise MonotonicityError(
                f"iterate decreased by {violation:.3e} (relative to sup) "
                f"at step {it} (K = {k:.3e})"
            )
        max_violation = max(max_violation, violation)
        step = float(np.abs(v_new.values - v.values).max())
        v = v_new
        sup = v.max()
        sup_history.append(sup)

        if sup > cap:
            return MonotoneResult(False, None, it, step, sup, max_violation,
                                  None, False, "cap exceeded")

        if step <= cfg.tol:
            return _finish(spec, v, it, step, max_violation, cfg, k)

        if newton_trigger > 0 and step <= newton_trigger:
            try:
                u = newton_refine(spec, v, cfg)
            except NewtonError:
                newton_trigger *= 0.25  # retry later, closer to the solution
            else:
                # the minimal solution dominates every iterate; a refined point
                # below v means Newton strayed off the minimal branch
                if float((v.values - u.values).max()) > 1e-8:
                    newton_trigger *= 0.25
                else:
                    rn = residual(spec, u).sup_norm()
                    return MonotoneResult(True, u, it, step, u.max(), max_violation,
                                          rn, True, "newton")

    window = cfg.growth_window
    tail = sup_history[-(window + 1):]
    if len(tail) > window and all(b > a for a, b in zip(tail, tail[1:])):
        return MonotoneResult(False, None, cfg.max_iters, step,
                              sup_history[-1], max_violation, None, False,
                              "sustained growth at iteration limit")
    raise IterationLimitError(
        f"no verdict after {cfg.max_iters} iterations (last step {step:.3e})"
    )


def _finish(spec, v, it, step, max_violation, cfg, k) -> MonotoneResult:
    polished = False
    if cfg.newton_polish:
        try:
            v = newton_refine(spec, v, cfg)
            polished = True
        except NewtonError as exc:
            log.debug("newton polish declined: %s", exc)
    rn = residual(spec, v).sup_norm()
    # a genuinely step-converged iterate has residual of order K * step;
    # anything much larger means the step criterion fired prematurely
    if rn > 10.0 * k * cfg.tol + 1e-8:
        raise IterationLimitError(
            f"step size converged but the residual is {rn:.3e} "
            f"(K = {k:.3e}); the iteration stalled without a solution"
        )
    return MonotoneResult(True, v, it, step, v.max(), max_violation, rn,
                          polished, "converged")


def _branch_point(coeffs: Coefficients, theta: float, sol: ScalarField,
                  iterations: int) -> BranchPoint:
    spec = critical_spec(coeffs, theta)
    eig = smallest_eigenpair(linearized_potential(spec, sol))
    if eig.lam < -1e-8:
        raise RuntimeError(
            f"minimal solution at theta={theta} has negative first eigenvalue "
            f"{eig.lam:.3e}; stability violated"
        )
    return BranchPoint(theta=theta, solution=sol, lam=eig.lam,
                       energy=energy(spec, sol), iterations=iterations,
                       converged=True)


def trace_branch(coeffs: Coefficients, theta_schedule, cfg: SolverConfig | None = None,
                 q: float | None = None) -> BranchRecord:
    """Minimal solutions along an ascending theta schedule, warm-started.

    The previous minimal solution is a strict subsolution at the next theta
    (the right side increases with theta), so it seeds the next iteration.
    """
    cfg = cfg or SolverConfig()
    thetas = [float(t) for t in theta_schedule]
    if any(b <= a for a, b in zip(thetas, thetas[1:])):
        raise ValueError("theta schedule must be strictly increasing")

    record = BranchRecord()
    prev: ScalarField | None = None
    for theta in thetas:
        spec = critical_spec(coeffs, theta) if q is None else \
            ProblemSpec(coeffs, q, theta=theta, epsilon=0.0)
        start: Subsolution | ScalarField
        if prev is None:
            start = build_subsolution(coeffs, theta, q=spec.q)
        else:
            start = prev
        out = monotone_iterate(spec, start, cfg)
        if not out.converged:
            raise NoSolutionError(f"no minimal solution at theta={theta} ({out.reason})")
        if prev is not None:
            drop = float((prev.values - out.solution.values).max())
            record.monotonicity_violation = max(record.monotonicity_violation, drop)
        record.points.append(_branch_point(coeffs, theta, out.solution, out.iterations))
        prev = out.solution
    return record


def _existence_solve(coeffs, theta, warm: ScalarField | None, cfg: SolverConfig,
                     newton_trigger: float = 1e-5) -> MonotoneResult:
    """Existence oracle at one theta: warm monotone iteration with early Newton."""
    spec = critical_spec(coeffs, theta)
    probe_cfg = replace(cfg, newton_trigger=newton_trigger)
    start: Subsolution | ScalarField
    start = warm if warm is not None else build_subsolution(coeffs, theta)
    return monotone_iterate(spec, start, probe_cfg)


def find_theta_star(coeffs: Coefficients, theta_hint: float = 0.1,
                    tol: float = 1e-4, cfg: SolverConfig | None = None,
                    lambda_tol: float = 1e-4, max_refine: int = 30) -> FoldResult:
    """Locate the fold: largest theta admitting a minimal solution.

    Bisection on the existence dichotomy down to bracket width tol, then a
    secant polish on lambda(theta) -> 0 (secant in lambda^2, which is
    asymptotically linear in theta at a fold).
    """
    cfg = cfg or SolverConfig()
    if theta_hint <= 0:
        raise ValueError("theta_hint must be positive")

    # Phase A: a theta where a solution exists.
    theta = theta_hint
    sol = None
    while theta >= tol:
        out = _existence_solve(coeffs, theta, None, cfg)
        if out.converged:
            sol = out.solution
            break
        theta *= 0.5
    if sol is None:
        raise NoSolutionError(f"no solution even at theta = {tol}")
    theta_lo, iters_lo = theta, out.iterations

    # Phase B: bracket from above by doubling.
    theta_hi = None
    for _ in range(60):
        cand = 2.0 * theta_lo
        out = _existence_solve(coeffs, cand, sol, cfg)
        if out.converged:
            theta_lo, sol, iters_lo = cand, out.solution, out.iterations
        else:
            theta_hi = cand
            break
    if theta_hi is None:
        raise BracketError("no fold found within the doubling cap; is f <= 0 somewhere?")

    # Phase C: bisection to the requested bracket width.
    bisection_steps = 0
    while theta_hi - theta_lo > tol:
        mid = 0.5 * (theta_lo + theta_hi)
        out = _existence_solve(coeffs, mid, sol, cfg)
        bisection_steps += 1
        if out.converged:
            theta_lo, sol, iters_lo = mid, out.solution, out.iterations
        else:
            theta_hi = mid
    accepted = [_branch_point(coeffs, theta_lo, sol, iters_lo)]

    # Phase D: secant polish on lambda^2 -> 0.  lambda^2 is asymptotically
    # linear in theta at a fold, so the extrapolated root estimates
    # theta_star; probes target 90% of the gap to stay on the convergent
    # side (a probe just above the fold converges very slowly to nowhere).
    refine_steps = 0
    pts = [(theta_lo, accepted[-1].lam)]
    probe_cfg = replace(cfg, max_iters=min(cfg.max_iters, 30_000))
    last_diverged = False
    while abs(pts[-1][1]) > lambda_tol and refine_steps < max_refine:
        refine_steps += 1
        if (not last_diverged and len(pts) >= 2
                and abs(pts[-1][1] - pts[-2][1]) > 0):
            (ta, la), (tb, lb) = pts[-2], pts[-1]
            root = tb + lb**2 * (tb - ta) / (la**2 - lb**2)
            proposal = theta_lo + 0.9 * (root - theta_lo)
        else:
            # after a failed probe (or without two points) fall back to
            # bisection, which always makes bracket progress
            proposal = theta_lo + 0.5 * (theta_hi - theta_lo)
        proposal = min(proposal, theta_hi - 1e-15 * max(1.0, theta_hi))
        if proposal <= theta_lo:
            break
        try:
            out = _existence_solve(coeffs, proposal, sol, probe_cfg)
        except IterationLimitError:
            break  # probe too close to the fold to classify; keep the best
        if out.converged:
            theta_lo, sol, iters_lo = proposal, out.solution, out.iterations
            bp = _branch_point(coeffs, theta_lo, sol, iters_lo)
            accepted.append(bp)
            pts.append((theta_lo, bp.lam))
            last_diverged = False
        else:
            theta_hi = proposal
            last_diverged = True

    # Fold estimate: extrapolate lambda^2 to zero when two points are
    # available; with a single point, lambda <= lambda_tol already certifies
    # that theta_lo sits at the fold to quadratic accuracy.
    if len(pts) >= 2 and abs(pts[-1][1] - pts[-2][1]) > 0:
        (ta, la), (tb, lb) = pts[-2], pts[-1]
        est = tb + lb**2 * (tb - ta) / (la**2 - lb**2)
        theta_star = min(max(est, np.nextafter(theta_lo, np.inf)), theta_hi)
    elif abs(pts[-1][1]) <= lambda_tol:
        theta_star = theta_lo + 0.01 * (theta_hi - theta_lo)
    else:
        theta_star = 0.5 * (theta_lo + theta_hi)

    log.info("fold: theta_star=%.8f bracket=(%.8f, %.8f) lambda=%.3e",
             theta_star, theta_lo, theta_hi, pts[-1][1])
    return FoldResult(theta_star=float(theta_star), bracket=(theta_lo, theta_hi),
                      last_branch_point=accepted[-1],
                      bisection_steps=bisection_steps,
                      refinement_steps=refine_steps, accepted=accepted)
