"""Damped Newton solver for ``det D^2 u = f (1 + |Du|^2)^2`` on a square grid.

The two outermost node rings carry Dirichlet data; every other node carries
the discrete equation, so all of its stencils see defined values.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .errors import InputError, StudyError
from .fieldcalc import Grid2D, ScalarField, as_field, hessian_fd
from .manufactured import manufactured

log = logging.getLogger(__name__)

BOUNDARY_RINGS = 2
INITIAL_GUESSES = ("exact-perturbed", "quadratic-fit", "exact")


@dataclass(frozen=True)
class ProblemSpec:
    R: float
    grid: Grid2D
    f: ScalarField
    boundary: np.ndarray
    m: float
    M: float
    exact: object = None  # ManufacturedSolution, when known

    def __post_init__(self):
        fv = self.f.values
        if self.f.grid != self.grid:
            raise InputError("f lives on a different grid")
        if not 0 < self.m <= self.M:
            raise InputError(f"need 0 < m <= M, got m={self.m}, M={self.M}")
        if np.min(fv) < self.m * (1 - 1e-12) or np.max(fv) > self.M * (1 + 1e-12):
            raise InputError("f violates m <= f <= M on the grid")
        b = np.array(self.boundary, dtype=float)
        if b.shape != self.grid.shape or not np.all(np.isfinite(b[self.boundary_mask])):
            raise InputError("boundary data must be finite on the boundary rings")
        b.flags.writeable = False
        object.__setattr__(self, "boundary", b)
        if self.grid.half_width < self.R * (1 - 1e-12):
            raise InputError(f"grid half-width {self.grid.half_width} does not cover B_R, R={self.R}")

    @property
    def boundary_mask(self):
        return self.grid.ring() < BOUNDARY_RINGS

    @property
    def equation_mask(self):
        return ~self.boundary_mask


def problem_from_manufactured(name, R=1.0, n_cells=64, half_width=None, scale=1.0):
    ms = manufactured(name, scale)
    grid = Grid2D(R if half_width is None else half_width, n_cells)
    f = ScalarField(grid, ms.on(grid, "f"))
    return ProblemSpec(R=float(R), grid=grid, f=f, boundary=ms.on(grid, "u"),
                       m=float(np.min(f.values)), M=float(np.max(f.values)), exact=ms)


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 50
    residual_tolerance: float = 1e-10
    max_halvings: int = 30
    initial_guess: str = "exact-perturbed"
    perturbation_amplitude: float = 0.01
    seed: int = 0
    convexity_floor: float = -1e-10

    def __post_init__(self):
        if self.max_iterations < 1:
            raise InputError("max_iterations must be >= 1")
        if not self.residual_tolerance > 0:
            raise InputError("residual_tolerance must be positive")
        if self.initial_guess not in INITIAL_GUESSES:
            raise InputError(f"initial_guess must be one of {INITIAL_GUESSES}")


@dataclass(frozen=True)
class SolutionState:
    u: ScalarField
    residual_norm: float
    iterations: int
    convexity_margin: float
    converged: bool
    reason: str = ""
    log: list = field(default_factory=list, compare=False)
    tolerance: float = 1e-10

    def summary(self):
        return {"converged": self.converged, "iterations": self.iterations,
                "residual_norm": self.residual_norm,
                "convexity_margin": self.convexity_margin, "reason": self.reason}


def _values(u):
    return as_field(u).values if not isinstance(u, np.ndarray) else u


def residual(u, spec):
    """``det D_h^2 u - f (1 + |D_h u|^2)^2`` on equation nodes, ``u - data`` on the rings."""
    v = _values(u)
    hs = hessian_fd(ScalarField(spec.grid, v))
    p = 1.0 + hs.grad[0] ** 2 + hs.grad[1] ** 2
    n = hs.det - spec.f.values * p * p
    out = np.where(spec.boundary_mask, v - spec.boundary, n)
    return ScalarField(spec.grid, out)


def convexity_margin(u):
    """Smallest Hessian eigenvalue over nodes with a full stencil."""
    hs = hessian_fd(as_field(u))
    _, lam2, _ = hs.eigen()
    return float(np.min(lam2[hs.grid.interior(1)]))


def jacobian_assemble(u, spec):
    """Sparse Jacobian of :func:`residual`, one row per node (row-major index).

    Interior rows are ``F11 D11 + F22 D22 + 2 F12 D12 - 4 f P (u1 D1 + u2 D2)``
    with ``F`` the cofactor matrix of the discrete Hessian and ``P = 1 + |Du|^2``.
    """
    v = _values(u)
    grid = spec.grid
    n1 = grid.n_cells + 1
    h = grid.h
    hs = hessian_fd(ScalarField(grid, v))
    f11, f12, f22 = hs.cofactor
    p = 1.0 + hs.grad[0] ** 2 + hs.grad[1] ** 2
    w = 4.0 * spec.f.values * p
    c1 = -w * hs.grad[0]
    c2 = -w * hs.grad[1]

    eq = spec.equation_mask
    ii, jj = np.nonzero(eq)
    row = ii * n1 + jj
    ih2, iq = 1.0 / (h * h), 1.0 / (4.0 * h * h)
    ih = 1.0 / (2.0 * h)
    a11, a22, a12 = f11[eq], f22[eq], 2.0 * f12[eq]
    b1, b2 = c1[eq], c2[eq]
    stencil = [
        ((0, 0), -2.0 * ih2 * (a11 + a22)),
        ((1, 0), ih2 * a11 + ih * b1),
        ((-1, 0), ih2 * a11 - ih * b1),
        ((0, 1), ih2 * a22 + ih * b2),
        ((0, -1), ih2 * a22 - ih * b2),
        ((1, 1), iq * a12),
        ((-1, -1), iq * a12),
        ((1, -1), -iq * a12),
        ((-1, 1), -iq * a12),
    ]
    rows, cols, vals = [], [], []
    for (di, dj), coef in stencil:
        rows.append(row)
        cols.append((ii + di) * n1 + (jj + dj))
        vals.append(coef)
    bi, bj = np.nonzero(~eq)
    brow = bi * n1 + bj
    rows.append(brow)
    cols.append(brow)
    vals.append(np.ones(brow.shape))
    size = n1 * n1
    return sps.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(size, size))


def smooth_perturbation(grid, seed=0, rings=BOUNDARY_RINGS):
    """Random smooth bump, max-norm 1, vanishing on the boundary rings."""
    rng = np.random.default_rng(seed)
    a = grid.half_width - (rings - 1) * grid.h
    x1, x2 = grid.mesh
    s1 = (x1 + a) / (2 * a)
    s2 = (x2 + a) / (2 * a)
    p = np.zeros(grid.shape)
    for k1 in (1, 2):
        for k2 in (1, 2):
            p += rng.uniform(-1, 1) * np.sin(k1 * np.pi * s1) * np.sin(k2 * np.pi * s2)
    # extra bubble factor: value and slope vanish on the innermost data ring
    p *= np.sin(np.pi * s1) * np.sin(np.pi * s2)
    p[grid.ring() < rings] = 0.0
    return p / np.max(np.abs(p))


def quadratic_fit(spec):
    """Least-squares ``x^T A x / 2 + b.x + c`` to the ring data, with ``A`` made
    positive definite, used as a convex blind start."""
    grid = spec.grid
    x1, x2 = grid.mesh
    mask = spec.boundary_mask
    X = np.column_stack([0.5 * x1[mask] ** 2, x1[mask] * x2[mask], 0.5 * x2[mask] ** 2,
                         x1[mask], x2[mask], np.ones(mask.sum())])
    coef, *_ = np.linalg.lstsq(X, spec.boundary[mask], rcond=None)
    a = np.array([[coef[0], coef[1]], [coef[1], coef[2]]])
    lam, vec = np.linalg.eigh(a)
    lam = np.maximum(lam, 1e-3 * max(1.0, float(np.max(np.abs(lam)))))
    a = (vec * lam) @ vec.T
    q = (0.5 * (a[0, 0] * x1 ** 2 + 2 * a[0, 1] * x1 * x2 + a[1, 1] * x2 ** 2)
         + coef[3] * x1 + coef[4] * x2 + coef[5])
    # the misfit on the rings is carried inward harmonically so the start has
    # no kink where the data meets the quadratic
    return q + _harmonic_extension(grid, mask, spec.boundary - q)


def _harmonic_extension(grid, mask, data):
    n1 = grid.n_cells + 1
    size = n1 * n1
    idx = np.arange(size).reshape(grid.shape)
    eq = ~mask
    ii, jj = np.nonzero(eq)
    row = idx[ii, jj]
    rows, cols, vals = [row], [row], [np.full(row.shape, -4.0)]
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        rows.append(row)
        cols.append(idx[ii + di, jj + dj])
        vals.append(np.ones(row.shape))
    b = idx[mask]
    rows.append(b)
    cols.append(b)
    vals.append(np.ones(b.shape))
    lap = sps.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(size, size))
    rhs = np.where(mask, data, 0.0).ravel()
    return splu(lap).solve(rhs).reshape(grid.shape)


def initial_guess(spec, config):
    kind = config.initial_guess
    if kind == "quadratic-fit":
        return quadratic_fit(spec)
    if spec.exact is None:
        raise InputError(f"initial guess {kind!r} needs a manufactured solution")
    u = spec.exact.on(spec.grid, "u")
    if kind == "exact":
        return u
    return u + config.perturbation_amplitude * smooth_perturbation(spec.grid, config.seed)


class _Singular(Exception):
    def __init__(self, node):
        self.node = node


def _solve(jac, rhs, n1):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        try:
            lu = splu(jac.tocsc())
        except (RuntimeError, Warning):
            raise _Singular(None)
    piv = np.abs(lu.U.diagonal())
    if piv.min() <= 1e-14 * piv.max():
        col = int(lu.perm_c[int(np.argmin(piv))])
        raise _Singular(divmod(col, n1))
    return lu.solve(rhs)


def newton_solve(spec, config=None, u0=None):
    """Damped Newton iteration.  Never raises on numerical failure: the returned
    state has ``converged=False`` and a ``reason``."""
    config = config or SolverConfig()
    grid = spec.grid
    n1 = grid.n_cells + 1
    u = np.array(initial_guess(spec, config) if u0 is None else _values(u0), dtype=float)
    u = np.where(spec.boundary_mask, spec.boundary, u)
    res = residual(u, spec).values
    rn = float(np.max(np.abs(res)))
    margin = convexity_margin(ScalarField(grid, u))
    history = [{"iteration": 0, "residual": rn, "halvings": 0, "convexity_margin": margin}]
    tol = config.residual_tolerance

    def state(converged, it, reason=""):
        return SolutionState(u=ScalarField(grid, u), residual_norm=rn, iterations=it,
                             convexity_margin=margin, converged=converged, reason=reason,
                             log=history, tolerance=tol)

    if margin < config.convexity_floor:
        return state(False, 0, f"initial guess not convex (margin {margin:.3e})")
    for it in range(1, config.max_iterations + 1):
        if rn <= tol:
            return state(True, it - 1)
        try:
            step = _solve(jacobian_assemble(u, spec), -res.ravel(), n1).reshape(grid.shape)
        except _Singular as exc:
            where = "" if exc.node is None else f" near node {exc.node}"
            return state(False, it - 1, f"singular Jacobian{where}")
        t = 1.0
        for halvings in range(config.max_halvings + 1):
            trial = u + t * step
            tres = residual(trial, spec).values
            trn = float(np.max(np.abs(tres)))
            tmargin = convexity_margin(ScalarField(grid, trial))
            if trn < rn and tmargin > config.convexity_floor:
                break
            t *= 0.5
        else:
            reason = ("convexity unrecoverable" if tmargin <= config.convexity_floor
                      else "line search failed to reduce the residual")
            return state(False, it - 1, reason)
        u, res, rn, margin = trial, tres, trn, tmargin
        history.append({"iteration": it, "residual": rn, "halvings": halvings,
                        "convexity_margin": margin})
        log.debug("newton it=%d residual=%.3e halvings=%d margin=%.3e", it, rn, halvings, margin)
    if rn <= tol:
        return state(True, config.max_iterations)
    return state(False, config.max_iterations, "max iterations exceeded")


def sup_error(state, spec):
    if spec.exact is None:
        raise InputError("problem has no exact solution")
    return float(np.max(np.abs(state.u.values - spec.exact.on(spec.grid, "u"))))


def convergence_study(name, levels, R=1.0, config=None, scale=1.0):
    """Solve on each level and report sup-errors and observed orders."""
    levels = list(levels)
    if len(levels) < 2:
        raise InputError("a convergence study needs at least two levels")
    config = config or SolverConfig()
    rows = []
    for n in levels:
        spec = problem_from_manufactured(name, R=R, n_cells=n, scale=scale)
        st = newton_solve(spec, config)
        if not st.converged:
            raise StudyError(f"level n_cells={n} failed: {st.reason}", level=n)
        rows.append({"n_cells": n, "h": spec.grid.h, "iterations": st.iterations,
                     "residual": st.residual_norm, "sup_error": sup_error(st, spec),
                     "order": None})
    for prev, cur in zip(rows, rows[1:]):
        if prev["sup_error"] > 0 and cur["sup_error"] > 0:
            cur["order"] = math.log(prev["sup_error"] / cur["sup_error"]) / math.log(prev["h"] / cur["h"])
    return rows
