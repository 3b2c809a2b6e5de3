"""Blow-up forensics: standard bubbles, rescaled profiles, stability runs.

Concentrating solution families look, after rescaling by the blow-up scale
mu = (sup u)^(-(q-2)/2), like the radial profile

    U(x) = (1 + f0 |x|^2 / (n(n-2)))^(-(n-2)/2),

which solves Delta U = f0 U^(2*-1) on R^n.  The stability experiment solves
the subcritical family and issues CONVERGED when no concentration is seen,
keeping BLOWUP as a first-class outcome with the profile evidence attached.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import map_coordinates

from .branch import SolverConfig, build_subsolution, monotone_iterate
from .core import Coefficients, ProblemSpec, critical_exponent
from .grid import ScalarField, gradient

log = logging.getLogger(__name__)


class StructuralViolationError(RuntimeError):
    """Blow-up forensics found f <= 0 at the concentration point."""


@dataclass(frozen=True)
class BubbleSpec:
    """Parameters of a standard bubble: dimension, f0 = f(x0) > 0, scale mu."""

    n: int
    f0: float
    mu: float = 1.0
    center: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n not in (3, 4, 5):
            raise ValueError("n must be 3, 4 or 5")
        if self.f0 <= 0:
            raise ValueError("f0 must be positive")
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    @property
    def r0(self) -> float:
        return float(np.sqrt(self.n * (self.n - 2) / self.f0))


@dataclass
class LocalField:
    """A field sampled on a uniform window of R^n centered at the origin."""

    values: np.ndarray
    spacing: float
    half_width: float


@dataclass
class BubbleResidualReport:
    max_rel_residual: float
    spacing: float
    interior_points: int


@dataclass
class ProfileReport:
    mu: float
    center_index: tuple[int, ...]
    f0: float
    deviation: float
    mu_over_period: float
    concentrated: bool


@dataclass
class StabilityMember:
    q: float
    sup_u: float
    min_u: float
    mu: float
    deviation: float
    iterations: int


@dataclass
class StabilityResult:
    members: list[StabilityMember]
    verdict: str                      # CONVERGED or BLOWUP
    sup_differences: list[float]
    gradient_differences: list[float]  # C^1 content, checked at sup-norm level
    subsolution_floor: float
    solutions: list[ScalarField] = field(default_factory=list)


def bubble_profile(spec: BubbleSpec, radii_sq: np.ndarray) -> np.ndarray:
    """U at squared distances |x|^2 from the center."""
    return (1.0 + radii_sq / spec.r0**2) ** (-(spec.n - 2) / 2.0)


def standard_bubble(spec: BubbleSpec, window_half_width: float,
                    spacing: float | None = None) -> tuple[LocalField, BubbleResidualReport]:
    """Sample the bubble on a local fine grid and report its PDE residual.

    The residual max |Delta_fd U - f0 U^(2*-1)| / max U^(2*-1) over interior
    points uses 4th-order central differences, so it measures pure
    discretization error, O(h^4) under refinement.
    """
    h = spacing if spacing is not None else spec.r0 / 64.0
    m = int(round(window_half_width / h))
    if m < 3:
        raise ValueError("window too small relative to the 4th-order stencil")
    axis = np.arange(-m, m + 1) * h
    mesh = np.meshgrid(*([axis] * spec.n), indexing="ij")
    r2 = sum(x**2 for x in mesh)
    u = bubble_profile(spec, r2)

    # geometer's sign: Delta = -sum d^2/dx_i^2
    lap = np.zeros_like(u)
    for ax in range(spec.n):
        for shift, w in ((-2, -1.0 / 12), (-1, 16.0 / 12), (0, -30.0 / 12),
                         (1, 16.0 / 12), (2, -1.0 / 12)):
            lap += w * np.roll(u, shift, axis=ax)
    lap = -lap / h**2

    ts = critical_exponent(spec.n)
    rhs = spec.f0 * u ** (ts - 1.0)
    interior = tuple(slice(2, -2) for _ in range(spec.n))
    resid = np.abs(lap[interior] - rhs[interior])
    rel = float(resid.max() / rhs.max())
    report = BubbleResidualReport(max_rel_residual=rel, spacing=h,
                                  interior_points=int(resid.size))
    return LocalField(values=u, spacing=h, half_width=m * h), report


def rescaled_profile_compare(u: ScalarField, f: ScalarField, q: float,
                             window: float = 5.0,
                             samples_per_unit: int | None = None) -> ProfileReport:
    """Deviation of the rescaled solution from the standard bubble.

    Finds the peak, rescales by mu = (sup u)^(-(q-2)/2), interpolates u on
    the window |x| <= window (in mu units) and compares with the bubble at
    f0 = f(x_peak).  Only meaningful when mu is well below the torus periods;
    the mu/period ratio is reported alongside.
    """
    grid = u.grid
    n = grid.dim
    if samples_per_unit is None:
        # the window lattice has (2 * window * s + 1)^n points; keep it flat
        samples_per_unit = {3: 4, 4: 2, 5: 1}[n]
    idx_flat = int(np.argmax(u.values))
    center_index = np.unravel_index(idx_flat, grid.resolutions)
    peak = float(u.values[center_index])
    if peak <= 0:
        raise ValueError("u must have a positive maximum")
    f0 = float(f.values[center_index])
    if f0 <= 0:
        raise StructuralViolationError(
            f"f = {f0:.3e} <= 0 at the concentration point; blow-up there is "
            "structurally impossible"
        )
    mu = peak ** (-(q - 2.0) / 2.0)

    spec = BubbleSpec(n=n, f0=f0)
    m = int(window * samples_per_unit)
    axis = np.arange(-m, m + 1) / samples_per_unit
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    r2 = sum(x**2 for x in mesh)
    mask = r2 <= window**2
    target = bubble_profile(spec, r2)

    # fractional grid coordinates of the window points, torus-wrapped
    coords = []
    for ax in range(n):
        spacing = grid.periods[ax] / grid.resolutions[ax]
        coords.append(center_index[ax] + mesh[ax] * mu / spacing)
    sampled = map_coordinates(u.values, np.stack(coords), order=3, mode="grid-wrap")
    rescaled = sampled / peak  # mu^(2/(q-2)) u with mu = peak^(-(q-2)/2)
    deviation = float(np.abs(rescaled[mask] - target[mask]).max())

    ratio = mu / min(grid.periods)
    return ProfileReport(mu=mu, center_index=tuple(int(i) for i in center_index),
                         f0=f0, deviation=deviation, mu_over_period=ratio,
                         concentrated=bool(ratio <= 0.1 and deviation <= 0.1))


def stability_experiment(coeffs: Coefficients, theta: float, q_schedule,
                         a_perturbations=None,
                         cfg: SolverConfig | None = None) -> StabilityResult:
    """Solve the subcritical family (EL_{q_k}) with perturbed a and classify.

    a_perturbations: optional list of fields added to a (same length as the
    q schedule).  Verdict CONVERGED when successive sup-norm differences
    decrease and no concentration indicators fire; BLOWUP otherwise, with
    the per-member mu and profile evidence in the record.
    """
    cfg = cfg or SolverConfig()
    qs = [float(q) for q in q_schedule]
    ts = critical_exponent(coeffs.grid.dim)
    if any(q < 2.0 or q > ts + 1e-12 for q in qs):
        raise ValueError("q schedule entries must lie in [2, 2*]")
    if a_perturbations is not None and len(a_perturbations) != len(qs):
        raise ValueError("one perturbation per schedule entry required")

    members, sols = [], []
    floor = np.inf
    for k, q in enumerate(qs):
        a_k = coeffs.a if a_perturbations is None else coeffs.a + a_perturbations[k]
        coeffs_k = Coefficients(coeffs.h, coeffs.f, a_k)
        spec = ProblemSpec(coeffs_k, q, theta=theta, epsilon=0.0)
        sub = build_subsolution(coeffs_k, theta, q=q)
        floor = min(floor, sub.field.min())
        out = monotone_iterate(spec, sub, cfg)
        if not out.converged:
            raise RuntimeError(
                f"no solution for family member q={q} ({out.reason}); "
                "stability experiment inputs are inconsistent"
            )
        sol = out.solution
        profile = rescaled_profile_compare(sol, coeffs.f, q)
        members.append(StabilityMember(q=q, sup_u=sol.max(), min_u=sol.min(),
                                       mu=profile.mu, deviation=profile.deviation,
                                       iterations=out.iterations))
        sols.append(sol)

    diffs = [float(np.abs(b.values - a.values).max())
             for a, b in zip(sols, sols[1:])]
    grad_diffs = [max(p.sup_norm() for p in gradient(b - a))
                  for a, b in zip(sols, sols[1:])]
    decreasing = all(d2 < d1 for d1, d2 in zip(diffs, diffs[1:]))
    floors_ok = all(m.min_u >= floor - 1e-12 for m in members)
    mus_ok = min(m.mu for m in members) > 1e-3
    sups_ok = max(m.sup_u for m in members) < 1e6
    verdict = "CONVERGED" if (decreasing and floors_ok and mus_ok and sups_ok) \
        else "BLOWUP"
    log.info("stability experiment: %s (final diff %.3e)", verdict,
             diffs[-1] if diffs else float("nan"))
    return StabilityResult(members=members, verdict=verdict,
                           sup_differences=diffs,
                           gradient_differences=grad_diffs,
                           subsolution_floor=float(floor),
                           solutions=sols)
