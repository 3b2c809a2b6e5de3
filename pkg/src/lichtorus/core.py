"""Problem definition, residuals, energy functionals and spectral eigensolvers.

The equation under study is

    Delta u + h u = f u^(q-1) + theta a u^(-(q+1)),   2 <= q <= 2* = 2n/(n-2),

on a flat torus, with coercive Delta + h, a >= 0 nonzero, max f > 0.  The
epsilon-regularized energy replaces the singular a-term by
a (eps + (u+)^2)^(-q/2), which is defined for sign-changing u.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import (
    NonCoerciveOperatorError,
    ScalarField,
    TorusGrid,
    constant_field,
    h1h_quadratic_form,
    helmholtz_solve,
    integrate,
    l2_inner,
    laplacian,
    lp_norm,
)

log = logging.getLogger(__name__)

# Negative powers are evaluated only on fields bounded away from zero;
# below this floor we refuse rather than clamp.
POSITIVITY_FLOOR = 1e-12


class PositivityError(ValueError):
    """A field that must be strictly positive was not."""


class EigenSolverError(RuntimeError):
    """Inverse iteration failed to converge within its cap."""


def critical_exponent(dim: int) -> float:
    """2* = 2n/(n-2): 6 (n=3), 4 (n=4), 10/3 (n=5)."""
    return 2.0 * dim / (dim - 2.0)


@dataclass(frozen=True)
class Coefficients:
    """The coefficient triple (h, f, a) on a shared grid.

    Requires a >= 0 with max a > 0, and max f > 0.  Coercivity of Delta + h
    is checked separately by coercivity_check.
    """

    h: ScalarField
    f: ScalarField
    a: ScalarField

    def __post_init__(self):
        if not (self.h.grid.compatible(self.f.grid) and self.h.grid.compatible(self.a.grid)):
            raise ValueError("h, f, a must share a grid")
        if self.a.min() < 0:
            raise ValueError(f"a must be nonnegative (min a = {self.a.min():.3e})")
        if self.a.max() <= 0:
            raise ValueError("a must not be identically zero")
        if self.f.max() <= 0:
            raise ValueError(f"max f must be positive (max f = {self.f.max():.3e})")

    @property
    def grid(self) -> TorusGrid:
        return self.h.grid


@dataclass(frozen=True)
class ProblemSpec:
    """One instance of the equation: coefficients + (q, theta, epsilon).

    epsilon = 0 selects the unregularized functional (positive u only);
    epsilon > 0 selects the regularized one, defined for all u.
    """

    coefficients: Coefficients
    q: float
    theta: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        ts = self.two_star
        if not (2.0 <= self.q <= ts + 1e-12):
            raise ValueError(f"q = {self.q} outside [2, 2*] = [2, {ts}]")
        if self.theta < 0:
            raise ValueError("theta must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")

    @property
    def grid(self) -> TorusGrid:
        return self.coefficients.grid

    @property
    def two_star(self) -> float:
        return critical_exponent(self.coefficients.grid.dim)

    def at(self, *, q: float | None = None, theta: float | None = None,
           epsilon: float | None = None) -> "ProblemSpec":
        """Copy with selected parameters replaced."""
        return ProblemSpec(
            self.coefficients,
            self.q if q is None else q,
            self.theta if theta is None else theta,
            self.epsilon if epsilon is None else epsilon,
        )


def critical_spec(coefficients: Coefficients, theta: float) -> ProblemSpec:
    return ProblemSpec(coefficients, critical_exponent(coefficients.grid.dim),
                       theta=theta, epsilon=0.0)


def _require_positive(u: ScalarField, what: str = "u"):
    m = u.min()
    if m <= POSITIVITY_FLOOR:
        raise PositivityError(f"{what} must be strictly positive (min = {m:.3e})")


def residual(spec: ProblemSpec, u: ScalarField) -> ScalarField:
    """Delta u + h u - f u^(q-1) - theta a u^(-(q+1)); zero iff u solves."""
    _require_positive(u)
    c = spec.coefficients
    uv = u.values
    nl = c.f.values * uv ** (spec.q - 1.0) + spec.theta * c.a.values * uv ** (-(spec.q + 1.0))
    return ScalarField(u.grid, laplacian(u).values + c.h.values * uv - nl)


def regularized_residual(spec: ProblemSpec, u: ScalarField) -> ScalarField:
    """Euler-Lagrange residual of the eps-regularized energy (any u, eps > 0)."""
    if spec.epsilon <= 0:
        raise ValueError("regularized residual requires epsilon > 0")
    c = spec.coefficients
    up = np.maximum(u.values, 0.0)
    denom = (spec.epsilon + up**2) ** (spec.q / 2.0 + 1.0)
    nl = c.f.values * up ** (spec.q - 1.0) + spec.theta * c.a.values * up / denom
    return ScalarField(u.grid, laplacian(u).values + c.h.values * u.values - nl)


# The gradient of the regularized energy coincides with its EL residual.
energy_gradient = regularized_residual


def energy(spec: ProblemSpec, u: ScalarField) -> float:
    """The energy functional, regularized or not depending on spec.epsilon.

    I(u) = 1/2 int(|grad u|^2 + h u^2) - 1/q int f (u+)^q
           + theta/q int a * [ (u+)^(-q)  or  (eps + (u+)^2)^(-q/2) ].
    """
    c = spec.coefficients
    quad = 0.5 * h1h_quadratic_form(u, c.h)
    cellv = u.grid.cell_volume
    if spec.epsilon > 0:
        up = np.maximum(u.values, 0.0)
        fterm = float(np.sum(c.f.values * up ** spec.q)) * cellv / spec.q
        aterm = float(np.sum(c.a.values * (spec.epsilon + up**2) ** (-spec.q / 2.0))) * cellv
        aterm *= spec.theta / spec.q
    else:
        _require_positive(u)
        uv = u.values
        fterm = float(np.sum(c.f.values * uv ** spec.q)) * cellv / spec.q
        aterm = spec.theta / spec.q * float(np.sum(c.a.values * uv ** (-spec.q))) * cellv
    return quad - fterm + aterm


def linearized_potential(spec: ProblemSpec, u: ScalarField) -> ScalarField:
    """W = h - (q-1) f u^(q-2) + (q+1) theta a u^(-(q+2)) at a positive u."""
    _require_positive(u)
    c = spec.coefficients
    uv = u.values
    w = (c.h.values
         - (spec.q - 1.0) * c.f.values * uv ** (spec.q - 2.0)
         + (spec.q + 1.0) * spec.theta * c.a.values * uv ** (-(spec.q + 2.0)))
    return ScalarField(u.grid, w)


def regularized_potential(spec: ProblemSpec, u: ScalarField) -> ScalarField:
    """Jacobian potential of the regularized residual (any u, eps > 0)."""
    if spec.epsilon <= 0:
        raise ValueError("regularized potential requires epsilon > 0")
    c = spec.coefficients
    up = np.maximum(u.values, 0.0)
    pos = (u.values > 0).astype(np.float64)
    base = spec.epsilon + up**2
    da = pos * base ** (-spec.q / 2.0 - 2.0) * (spec.epsilon - (spec.q + 1.0) * up**2)
    w = (c.h.values
         - (spec.q - 1.0) * c.f.values * pos * up ** (spec.q - 2.0)
         - spec.theta * c.a.values * da)
    return ScalarField(u.grid, w)


def linearized_apply(spec: ProblemSpec, u: ScalarField, v: ScalarField) -> ScalarField:
    """Apply the linearization Delta v + W(u) v of the residual at u."""
    w = linearized_potential(spec, u)
    return ScalarField(v.grid, laplacian(v).values + w.values * v.values)


@dataclass
class EigenResult:
    """First eigenpair of Delta + W: lam smallest eigenvalue, vector the
    positive L2-normalized eigenfunction."""

    lam: float
    vector: ScalarField
    iterations: int


def smallest_eigenpair(w: ScalarField, tol: float = 1e-10,
                       max_iters: int = 5000) -> EigenResult:
    """First eigenpair of Delta + W by inverse iteration.

    Shift sigma = min W - 1 makes Delta + W - sigma positive definite
    (Delta >= 0, multiplier >= 1); each inverse is a helmholtz_solve.
    Stops when the Rayleigh quotient changes by <= tol relatively.
    """
    grid = w.grid
    sigma = w.min() - 1.0
    shifted = w - sigma
    v = constant_field(grid, 1.0 / np.sqrt(grid.volume))
    lam_old = None
    for it in range(1, max_iters + 1):
        y = helmholtz_solve(shifted, v, tol=1e-12, max_iter=2000)
        nrm = lp_norm(y, 2.0)
        v = y * (1.0 / nrm)
        av = laplacian(v) + w * v
        lam = l2_inner(v, av) / l2_inner(v, v)
        if lam_old is not None and abs(lam - lam_old) <= tol * max(1.0, abs(lam)):
            break
        lam_old = lam
    else:
        raise EigenSolverError(f"inverse iteration did not converge in {max_iters} steps")

    if integrate(v) < 0:
        v = -v
    if v.min() <= 0:
        raise EigenSolverError(
            f"first eigenfunction is not positive (min = {v.min():.3e}); "
            "inverse iteration converged to a wrong vector"
        )
    v = v * (1.0 / lp_norm(v, 2.0))
    return EigenResult(lam=float(lam), vector=v, iterations=it)


def coercivity_check(h: ScalarField, tol: float = 1e-12) -> tuple[bool, float]:
    """Delta + h is coercive iff its smallest eigenvalue is positive."""
    res = smallest_eigenpair(h)
    return (res.lam > tol, res.lam)


def sobolev_constant_estimate(h: ScalarField, q: float, iterations: int = 200,
                              history: bool = False):
    """Lower estimate of the embedding constant S_{h,q} defined by
    ||u||_Lq <= S^(1/q) ||u||_{H1_h}.

    Projected gradient ascent of int |u|^q on the unit H1_h sphere from the
    constant start; the estimate sequence is nondecreasing by backtracking.
    The result is a heuristic lower bound (ascent may stop short of the sup).
    """
    grid = h.grid
    ts = critical_exponent(grid.dim)
    if not (2.0 <= q <= ts + 1e-12):
        raise ValueError(f"q = {q} outside [2, 2*]")
    coercive, lam = coercivity_check(h)
    if not coercive:
        raise NonCoerciveOperatorError(f"Delta + h not coercive (lambda_min = {lam:.3e})")

    hm = integrate(h)
    u = constant_field(grid, 1.0 / np.sqrt(hm))  # unit H1_h norm for constant h-mean

    def functional(x: ScalarField) -> float:
        return float(np.sum(np.abs(x.values) ** q)) * grid.cell_volume

    def project(x: ScalarField) -> ScalarField:
        return x * (1.0 / np.sqrt(h1h_quadratic_form(x, h)))

    u = project(u)
    vals = [functional(u)]
    step = 1.0
    for _ in range(iterations):
        g = ScalarField(grid, q * np.abs(u.values) ** (q - 1.0) * np.sign(u.values))
        d = helmholtz_solve(h, g)  # H1_h Riesz representative of the L2 gradient
        improved = False
        s = step
        for _ in range(40):
            cand = project(u + s * d)
            val = functional(cand)
            if val > vals[-1]:
                u, improved = cand, True
                vals.append(val)
                step = min(s * 1.5, 1e3)
                break
            s *= 0.5
        if not improved:
            vals.append(vals[-1])
            break
    estimate = vals[-1]
    return (estimate, vals) if history else estimate
