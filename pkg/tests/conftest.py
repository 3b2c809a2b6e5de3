import numpy as np
import pytest
from scipy.optimize import brentq

import lichtorus as lt


@pytest.fixture
def grid8():
    return lt.build_grid(3, [8, 8, 8], [1.0, 1.0, 1.0])


@pytest.fixture
def grid16():
    return lt.build_grid(3, [16, 16, 16], [1.0, 1.0, 1.0])


@pytest.fixture
def unit_coeffs8(grid8):
    one = lt.constant_field(grid8, 1.0)
    return lt.Coefficients(one, one, one)


@pytest.fixture
def unit_coeffs16(grid16):
    one = lt.constant_field(grid16, 1.0)
    return lt.Coefficients(one, one, one)


def constant_roots(theta, q, h=1.0, f=1.0, a=1.0):
    """Positive roots of h c^(q+2) = f c^(2q) + theta a: (stable, unstable).

    The independent 1-D oracle for constant-coefficient problems on unit
    tori: constant solutions of the PDE solve exactly this scalar equation.
    """
    g = lambda c: h * c ** (q + 2) - f * c ** (2 * q) - theta * a
    cstar = ((q + 2) * h / (2 * q * f)) ** (1.0 / (q - 2))
    lo = brentq(g, 1e-9, cstar, xtol=1e-15, rtol=8.9e-16)
    hi = brentq(g, cstar, 50.0, xtol=1e-15, rtol=8.9e-16)
    return lo, hi


def regularized_constant_root(theta, q, eps, branch="stable", h=1.0, f=1.0, a=1.0):
    """Constant solutions of the eps-regularized Euler-Lagrange equation."""
    g = lambda c: h * c - f * c ** (q - 1) - theta * a * c / (eps + c * c) ** (q / 2 + 1)
    c_lo, c_hi = constant_roots(theta, q, h, f, a)
    if branch == "stable":
        return brentq(g, 1e-6, 0.5 * (c_lo + c_hi), xtol=1e-15, rtol=8.9e-16)
    return brentq(g, 0.5 * (c_lo + c_hi), 50.0, xtol=1e-15, rtol=8.9e-16)


def linearized_constant_potential(c, theta, q, h=1.0, f=1.0, a=1.0):
    """Closed-form potential of the linearization at a constant solution."""
    return h - (q - 1) * f * c ** (q - 2) + (q + 1) * theta * a * c ** (-(q + 2))


def smooth_random_field(grid, rng, mean=0.0, amplitude=1.0, modes=3):
    """Seeded bandlimited random field (a few low cosine modes)."""
    out = lt.constant_field(grid, mean)
    for _ in range(modes):
        wv = [int(k) for k in rng.integers(-2, 3, size=grid.dim)]
        if all(k == 0 for k in wv):
            wv[0] = 1
        amp = amplitude * float(rng.uniform(0.2, 1.0))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        out = out + lt.cosine_field(grid, amp, wv, phase)
    return out
