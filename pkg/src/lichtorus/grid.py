"""Flat torus grids, scalar fields on them, and exact spectral operators.

The domain is T^n = prod_i (R / L_i Z) with the flat metric, discretized by a
uniform collocation grid of N_i points per axis.  All differential operators
act through the FFT and are exact for bandlimited (trigonometric polynomial)
fields.  Sign convention throughout: the Laplacian is the geometer's
Delta = -div grad, with nonnegative spectrum |2 pi k / L|^2.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray


class GridMismatchError(ValueError):
    """Raised when fields on different grids are combined."""


class NonCoerciveOperatorError(ValueError):
    """Raised when a Helmholtz solve is requested for a non-positive operator."""


class KrylovError(RuntimeError):
    """Raised when the preconditioned CG iteration does not converge."""


@dataclass(frozen=True)
class TorusGrid:
    """Uniform collocation grid on a flat torus of dimension 3, 4 or 5.

    resolutions are the per-axis point counts (even, >= 4); periods are the
    per-axis lengths L_i > 0.  Quadrature is the uniform grid sum times the
    cell volume, spectrally exact for trigonometric polynomials.
    """

    dim: int
    resolutions: tuple[int, ...]
    periods: tuple[float, ...]

    def __post_init__(self):
        if self.dim not in (3, 4, 5):
            raise ValueError(f"dimension out of range: {self.dim} (must be 3, 4 or 5)")
        if len(self.resolutions) != self.dim or len(self.periods) != self.dim:
            raise ValueError("resolutions and periods must have length dim")
        for n in self.resolutions:
            if n < 4 or n % 2 != 0:
                raise ValueError(f"resolution {n} must be even and >= 4")
        for length in self.periods:
            if not (length > 0):
                raise ValueError(f"period {length} must be positive")

    @property
    def volume(self) -> float:
        return float(np.prod(self.periods))

    @property
    def _axes_order(self) -> tuple[int, ...]:
        return tuple(range(self.dim))

    @property
    def npoints(self) -> int:
        return int(np.prod(self.resolutions))

    @property
    def cell_volume(self) -> float:
        return self.volume / self.npoints

    @functools.cached_property
    def axes(self) -> tuple[NDArray, ...]:
        """Per-axis coordinate arrays x_i = j * L_i / N_i."""
        return tuple(
            np.arange(n) * (length / n)
            for n, length in zip(self.resolutions, self.periods)
        )

    @functools.cached_property
    def _lap_multiplier(self) -> NDArray:
        """|2 pi k / L|^2 on the rfftn layout (last axis halved)."""
        mult = None
        for axis in range(self.dim):
            n, length = self.resolutions[axis], self.periods[axis]
            if axis == self.dim - 1:
                freq = np.fft.rfftfreq(n, d=length / n)
            else:
                freq = np.fft.fftfreq(n, d=length / n)
            omega2 = (2.0 * np.pi * freq) ** 2
            shape = [1] * self.dim
            shape[axis] = omega2.size
            omega2 = omega2.reshape(shape)
            mult = omega2 if mult is None else mult + omega2
        return mult

    @functools.cached_property
    def _rfft_weights(self) -> NDArray:
        """Multiplicity of each rfftn mode in the full spectrum (1 or 2)."""
        m = self.resolutions[-1] // 2 + 1
        w = np.full(m, 2.0)
        w[0] = 1.0
        w[-1] = 1.0  # Nyquist plane is self-conjugate for even N
        shape = [1] * self.dim
        shape[-1] = m
        return w.reshape(shape)

    def meshgrid(self) -> tuple[NDArray, ...]:
        return np.meshgrid(*self.axes, indexing="ij")

    def compatible(self, other: "TorusGrid") -> bool:
        return (
            self.dim == other.dim
            and self.resolutions == other.resolutions
            and self.periods == other.periods
        )


def build_grid(dim, resolutions, periods) -> TorusGrid:
    """Validated grid constructor."""
    return TorusGrid(int(dim), tuple(int(n) for n in resolutions),
                     tuple(float(p) for p in periods))


class ScalarField:
    """A real function sampled on a TorusGrid, immutable once built.

    Arithmetic combines fields only when they share a grid; scalars broadcast.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TorusGrid, values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.shape != grid.resolutions:
            raise ValueError(
                f"field shape {arr.shape} does not match grid {grid.resolutions}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("field contains non-finite values")
        arr = np.ascontiguousarray(arr).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", arr)

    def __setattr__(self, name, value):
        raise AttributeError("ScalarField is immutable")

    def _coerce(self, other):
        if isinstance(other, ScalarField):
            if not self.grid.compatible(other.grid):
                raise GridMismatchError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._coerce(other))

    def __rtruediv__(self, other):
        return ScalarField(self.grid, self._coerce(other) / self.values)

    def __pow__(self, exponent):
        return ScalarField(self.grid, np.power(self.values, exponent))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def sup_norm(self) -> float:
        return float(np.abs(self.values).max())

    def __repr__(self):
        return (f"ScalarField(grid={self.grid.resolutions}, "
                f"min={self.min():.6g}, max={self.max():.6g})")


def constant_field(grid: TorusGrid, value: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.resolutions, float(value)))


def cosine_field(grid: TorusGrid, amplitude: float, wavevector, phase: float = 0.0) -> ScalarField:
    """amplitude * cos(2 pi sum_i k_i x_i / L_i + phase) with integer k."""
    if len(wavevector) != grid.dim:
        raise ValueError("wavevector length must equal grid dim")
    mesh = grid.meshgrid()
    arg = np.zeros(grid.resolutions)
    for k, x, length in zip(wavevector, mesh, grid.periods):
        arg += 2.0 * np.pi * int(k) * x / length
    return ScalarField(grid, amplitude * np.cos(arg + phase))


def _check_same_grid(*fields: ScalarField) -> TorusGrid:
    grid = fields[0].grid
    for f in fields[1:]:
        if not grid.compatible(f.grid):
            raise GridMismatchError("fields live on different grids")
    return grid


def laplacian(u: ScalarField) -> ScalarField:
    """Delta u = -div grad u, exact for bandlimited fields."""
    grid = u.grid
    uhat = np.fft.rfftn(u.values)
    out = np.fft.irfftn(grid._lap_multiplier * uhat, s=grid.resolutions, axes=grid._axes_order)
    return ScalarField(grid, out)


def gradient(u: ScalarField) -> list[ScalarField]:
    """Spectral partial derivatives along each axis."""
    grid = u.grid
    uhat = np.fft.rfftn(u.values)
    out = []
    for axis in range(grid.dim):
        n, length = grid.resolutions[axis], grid.periods[axis]
        if axis == grid.dim - 1:
            freq = np.fft.rfftfreq(n, d=length / n)
        else:
            freq = np.fft.fftfreq(n, d=length / n)
        shape = [1] * grid.dim
        shape[axis] = freq.size
        omega = (2.0 * np.pi * freq).reshape(shape)
        out.append(ScalarField(grid, np.fft.irfftn(1j * omega * uhat, s=grid.resolutions, axes=grid._axes_order)))
    return out


def integrate(u: ScalarField) -> float:
    return float(u.values.sum()) * u.grid.cell_volume


def l2_inner(u: ScalarField, v: ScalarField) -> float:
    _check_same_grid(u, v)
    return float(np.vdot(u.values, v.values)) * u.grid.cell_volume


def lp_norm(u: ScalarField, p: float) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(np.sum(np.abs(u.values) ** p) * u.grid.cell_volume) ** (1.0 / p)


def gradient_energy(u: ScalarField) -> float:
    """int |grad u|^2, computed in spectral space (nonnegative by construction)."""
    grid = u.grid
    uhat = np.fft.rfftn(u.values)
    total = np.sum(grid._lap_multiplier * grid._rfft_weights * np.abs(uhat) ** 2)
    return float(total) * grid.cell_volume / grid.npoints


def h1h_quadratic_form(u: ScalarField, h: ScalarField) -> float:
    """The (possibly signed) form int(|grad u|^2 + h u^2)."""
    _check_same_grid(u, h)
    return gradient_energy(u) + float(np.sum(h.values * u.values**2)) * u.grid.cell_volume


def h1h_inner(u: ScalarField, v: ScalarField, h: ScalarField) -> float:
    """The H1_h pairing int(grad u . grad v + h u v)."""
    _check_same_grid(u, v, h)
    return l2_inner(laplacian(u), v) + float(
        np.sum(h.values * u.values * v.values)) * u.grid.cell_volume


def h1h_norm(u: ScalarField, h: ScalarField) -> float:
    """sqrt of the quadratic form; errors if the form is negative on this input."""
    q = h1h_quadratic_form(u, h)
    if q < 0:
        raise NonCoerciveOperatorError(
            f"H1_h quadratic form is negative ({q:.3e}) on this input"
        )
    return float(np.sqrt(q))


def _pcg(apply_a, apply_m, b: NDArray, tol: float, max_iter: int) -> tuple[NDArray, int]:
    """Preconditioned conjugate gradients on raw arrays."""
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), 0
    x = apply_m(b)
    r = b - apply_a(x)
    z = apply_m(r)
    p = z.copy()
    rz = float(np.vdot(r, z))
    for it in range(max_iter):
        rnorm = float(np.linalg.norm(r))
        if rnorm <= tol * bnorm:
            return x, it
        ap = apply_a(p)
        alpha = rz / float(np.vdot(p, ap))
        x = x + alpha * p
        r = r - alpha * ap
        z = apply_m(r)
        rz_new = float(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise KrylovError(f"PCG stalled at relative residual {rnorm / bnorm:.3e} "
                      f"after {max_iter} iterations")


def helmholtz_solve(c, rhs: ScalarField, tol: float = 1e-10,
                    max_iter: int = 500) -> ScalarField:
    """Solve (Delta + c) u = rhs for constant c > 0 or a variable field c.

    Constant c: direct spectral division, exact to roundoff.  Variable c:
    CG preconditioned by the constant-mean-c spectral inverse; the operator
    must be positive definite (mean c > 0 is a necessary condition, checked;
    genuine non-coercivity surfaces as CG failure).
    """
    grid = rhs.grid
    if isinstance(c, (int, float)):
        cval = float(c)
        if cval <= 0:
            raise NonCoerciveOperatorError(f"constant coefficient {cval} is not positive")
        rhat = np.fft.rfftn(rhs.values)
        out = np.fft.irfftn(rhat / (grid._lap_multiplier + cval), s=grid.resolutions, axes=grid._axes_order)
        return ScalarField(grid, out)

    _check_same_grid(c, rhs)
    cvals = c.values
    cbar = float(cvals.mean())
    if cbar <= 0:
        raise NonCoerciveOperatorError(
            f"mean of variable coefficient is {cbar:.3e} <= 0; operator cannot be coercive"
        )
    mult = grid._lap_multiplier

    def apply_a(x):
        xhat = np.fft.rfftn(x)
        return np.fft.irfftn(mult * xhat, s=grid.resolutions, axes=grid._axes_order) + cvals * x

    def apply_m(x):
        xhat = np.fft.rfftn(x)
        return np.fft.irfftn(xhat / (mult + cbar), s=grid.resolutions, axes=grid._axes_order)

    x, _ = _pcg(apply_a, apply_m, rhs.values, tol, max_iter)
    return ScalarField(grid, x)
