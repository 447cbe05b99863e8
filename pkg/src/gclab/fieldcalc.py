"""Uniform grids on ``[-a, a]^2`` and centred finite-difference calculus.

Arrays are indexed ``values[i, j]`` <-> ``(x1[i], x2[j])``.  Derivative
fields are NaN on the nodes where their stencil does not fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .eigensys import SymMatrix, eig2x2
from .errors import InputError, OutOfDomainError


@dataclass(frozen=True)
class Grid2D:
    half_width: float
    n_cells: int

    def __post_init__(self):
        if not (self.half_width > 0 and np.isfinite(self.half_width)):
            raise InputError(f"half_width must be positive, got {self.half_width}")
        if self.n_cells < 16 or self.n_cells % 2:
            raise InputError(f"n_cells must be an even integer >= 16, got {self.n_cells}")
        object.__setattr__(self, "half_width", float(self.half_width))
        object.__setattr__(self, "n_cells", int(self.n_cells))

    @property
    def h(self):
        return 2.0 * self.half_width / self.n_cells

    @property
    def shape(self):
        return (self.n_cells + 1, self.n_cells + 1)

    @property
    def coords(self):
        # written so the middle node is exactly 0 and the grid is exactly symmetric
        n = self.n_cells
        return self.half_width * (2.0 * np.arange(n + 1) - n) / n

    @property
    def mesh(self):
        x = self.coords
        return np.meshgrid(x, x, indexing="ij")

    @property
    def origin(self):
        c = self.n_cells // 2
        return (c, c)

    def ring(self):
        """Node distance (in cells) to the outer boundary."""
        i = np.arange(self.n_cells + 1)
        d = np.minimum(i, self.n_cells - i)
        return np.minimum.outer(d, d)

    def interior(self, margin=1):
        return self.ring() >= margin

    def radius2(self):
        x1, x2 = self.mesh
        return x1 * x1 + x2 * x2

    def node(self, i, j):
        x = self.coords
        return np.array([x[i], x[j]])

    def metadata(self):
        return {"a": self.half_width, "n_cells": self.n_cells, "h": self.h}


@dataclass(frozen=True)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise InputError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise InputError("field has non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid, fn):
        x1, x2 = grid.mesh
        return cls(grid, np.broadcast_to(fn(x1, x2), grid.shape))


def as_field(u):
    """Accept a ScalarField or anything carrying one as ``.u``."""
    if isinstance(u, ScalarField):
        return u
    inner = getattr(u, "u", None)
    if isinstance(inner, ScalarField):
        return inner
    raise InputError(f"expected a ScalarField, got {type(u).__name__}")


def _blank(grid, lead=()):
    return np.full(lead + grid.shape, np.nan)


def d1(v, axis, h):
    """Centred first difference of an array along ``axis``; NaN-padded."""
    out = np.full(v.shape, np.nan)
    sl = [slice(None)] * v.ndim
    lo, mid, hi = list(sl), list(sl), list(sl)
    lo[axis], mid[axis], hi[axis] = slice(None, -2), slice(1, -1), slice(2, None)
    out[tuple(mid)] = (v[tuple(hi)] - v[tuple(lo)]) / (2.0 * h)
    return out


def d2(v, axis, h):
    out = np.full(v.shape, np.nan)
    sl = [slice(None)] * v.ndim
    lo, mid, hi = list(sl), list(sl), list(sl)
    lo[axis], mid[axis], hi[axis] = slice(None, -2), slice(1, -1), slice(2, None)
    out[tuple(mid)] = (v[tuple(hi)] - 2.0 * v[tuple(mid)] + v[tuple(lo)]) / (h * h)
    return out


def d12(v, h):
    """Four-corner cross difference over the last two axes."""
    out = np.full(v.shape, np.nan)
    out[..., 1:-1, 1:-1] = (v[..., 2:, 2:] - v[..., 2:, :-2]
                            - v[..., :-2, 2:] + v[..., :-2, :-2]) / (4.0 * h * h)
    return out


def gradient_fd(u):
    """Centred gradient, shape ``(2, N+1, N+1)``, NaN on the outer ring."""
    u = as_field(u)
    h = u.grid.h
    v = u.values
    return np.stack([d1(v, 0, h), d1(v, 1, h)])


def _check_interior(grid, i, j, margin=1):
    n = grid.n_cells
    if not (margin <= i <= n - margin and margin <= j <= n - margin):
        raise OutOfDomainError(f"node ({i}, {j}) lacks a full stencil (margin {margin})")


def gradient_at(u, i, j):
    u = as_field(u)
    _check_interior(u.grid, i, j)
    return gradient_fd(u)[:, i, j]


@dataclass(frozen=True)
class HessianField:
    """Gradient and Hessian of a field at every node with a full 3x3 stencil."""

    grid: Grid2D
    grad: np.ndarray
    u11: np.ndarray
    u12: np.ndarray
    u22: np.ndarray

    @property
    def matrices(self):
        """Hessians stacked as ``(N+1, N+1, 2, 2)``."""
        return np.stack([np.stack([self.u11, self.u12], -1),
                         np.stack([self.u12, self.u22], -1)], -2)

    @property
    def cofactor(self):
        """``(F11, F12, F22)``: derivatives of the determinant w.r.t. the Hessian."""
        return self.u22, -self.u12, self.u11

    @property
    def det(self):
        return self.u11 * self.u22 - self.u12 * self.u12

    def eigen(self):
        """Closed-form ``(lam1, lam2, tau)`` at every node."""
        return eig2x2(self.u11, self.u12, self.u22)

    def matrix_at(self, i, j):
        _check_interior(self.grid, i, j)
        return SymMatrix([[self.u11[i, j], self.u12[i, j]], [self.u12[i, j], self.u22[i, j]]])


def hessian_fd(u):
    u = as_field(u)
    h = u.grid.h
    v = u.values
    return HessianField(u.grid, gradient_fd(u), d2(v, 0, h), d12(v, h), d2(v, 1, h))


def third_fd(hess):
    """``T[a, b, c] ~ d^3 u / dx_a dx_b dx_c`` from centred differences of the
    Hessian along ``c``.  Defined on nodes two cells from the boundary."""
    h = hess.grid.h
    m = hess.matrices                       # (N+1, N+1, 2, 2)
    m = np.moveaxis(m, (2, 3), (0, 1))      # (2, 2, N+1, N+1)
    return np.stack([d1(m, 2, h), d1(m, 3, h)], axis=2)


def fourth_fd(hess):
    """``Q[a, b, c, d]`` from second differences of the Hessian along ``(c, d)``."""
    h = hess.grid.h
    m = np.moveaxis(hess.matrices, (2, 3), (0, 1))
    cc = d2(m, 2, h)
    dd = d2(m, 3, h)
    cd = d12(m, h)
    return np.stack([np.stack([cc, cd], axis=2), np.stack([cd, dd], axis=2)], axis=2)


@dataclass(frozen=True)
class GradientBoundReport:
    R: float
    sup_grad_half_ball: float
    osc_ball: float
    bound: float
    slack: float
    holds: bool
    convex: bool
    min_eigenvalue: float
    worst_node: tuple

    def as_dict(self):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def gradient_bound_check(u, R, convexity_tol=-1e-10):
    """Convex-function gradient bound ``sup_{B_{R/2}} |Du| <= 2 osc_{B_R} u / R``.

    The grid version allows a slack ``C h`` with ``C`` the largest Hessian norm.
    """
    u = as_field(u)
    grid = u.grid
    if R <= 0 or R > grid.half_width * (1 + 1e-12):
        raise InputError(f"R={R} must lie in (0, a={grid.half_width}]")
    hess = hessian_fd(u)
    lam1, lam2, _ = hess.eigen()
    inner = grid.interior(1)
    lam2_in = np.where(inner, lam2, np.inf)
    worst = np.unravel_index(np.argmin(lam2_in), grid.shape)
    min_eig = float(lam2_in[worst])
    r2 = grid.radius2()
    half = inner & (r2 <= (0.5 * R) ** 2)
    ball = r2 <= R * R
    gnorm = np.hypot(hess.grad[0], hess.grad[1])
    sup_grad = float(np.max(gnorm[half]))
    osc = float(np.max(u.values[ball]) - np.min(u.values[ball]))
    c = float(np.max(np.maximum(np.abs(lam1), np.abs(lam2))[inner]))
    bound = 2.0 * osc / R
    slack = c * grid.h
    return GradientBoundReport(
        R=float(R), sup_grad_half_ball=sup_grad, osc_ball=osc, bound=bound, slack=slack,
        holds=bool(sup_grad <= bound + slack), convex=bool(min_eig >= convexity_tol),
        min_eigenvalue=min_eig, worst_node=(int(worst[0]), int(worst[1])))
