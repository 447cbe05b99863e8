"""Manufactured convex solutions ``u*`` with the curvature data they induce.

Each solution is written down symbolically; ``f`` and all derivatives are
obtained by exact differentiation and compiled to vectorised numpy closures.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
import sympy as sp

from .errors import InputError

_X1, _X2 = sp.symbols("x1 x2", real=True)

_BUILTINS = {
    "aniso-quadratic": _X1 ** 2 + _X2 ** 2 / 2,
    "cosh": sp.cosh(_X1) + _X2 ** 2 / 2,
    # lam1 == lam2 everywhere: exercises the degenerate-eigenvector path
    "radial-quadratic": (_X1 ** 2 + _X2 ** 2) / 2,
}


def names():
    return sorted(_BUILTINS)


def _compile(expr):
    fn = sp.lambdify((_X1, _X2), expr, modules="numpy")

    def call(x1, x2):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        shape = np.broadcast(x1, x2).shape
        return np.broadcast_to(np.asarray(fn(x1, x2), dtype=float), shape).copy()

    return call


def _compile_list(exprs):
    fns = [_compile(e) for e in exprs]

    def call(x1, x2):
        return np.stack([fn(x1, x2) for fn in fns])

    return call


@dataclass(frozen=True)
class ManufacturedSolution:
    """Exact solution and data.  Vector/tensor closures stack components first:
    ``grad(x1, x2)[i]``, ``hess(x1, x2)[i, j]``."""

    name: str
    scale: float
    u: Callable
    grad: Callable
    hess: Callable
    f: Callable
    f_grad: Callable
    f_hess: Callable

    def on(self, grid, what="u"):
        x1, x2 = grid.mesh
        return getattr(self, what)(x1, x2)

    def min_hessian_eigenvalue(self, grid):
        """Convexity certificate: smallest exact Hessian eigenvalue on the grid."""
        hs = self.on(grid, "hess")
        a, b, d = hs[0, 0], hs[0, 1], hs[1, 1]
        return float(np.min(0.5 * (a + d) - 0.5 * np.hypot(a - d, 2 * b)))

    def consistency_error(self, grid):
        """Max of ``|det D^2 u* - f (1 + |Du*|^2)^2|`` over the grid."""
        hs = self.on(grid, "hess")
        g = self.on(grid, "grad")
        det = hs[0, 0] * hs[1, 1] - hs[0, 1] * hs[1, 0]
        return float(np.max(np.abs(det - self.on(grid, "f") * (1 + g[0] ** 2 + g[1] ** 2) ** 2)))


@lru_cache(maxsize=None)
def manufactured(name, scale=1.0):
    """Built-in manufactured solution ``scale * u_name``."""
    if name not in _BUILTINS:
        raise InputError(f"unknown manufactured solution {name!r}; known: {', '.join(names())}")
    scale = float(scale)
    if not scale > 0:
        raise InputError("scale must be positive")
    u = sp.nsimplify(scale) * _BUILTINS[name] if scale != 1.0 else _BUILTINS[name]
    xs = (_X1, _X2)
    grad = [sp.diff(u, x) for x in xs]
    hess = [[sp.diff(u, x, y) for y in xs] for x in xs]
    f = (hess[0][0] * hess[1][1] - hess[0][1] ** 2) / (1 + grad[0] ** 2 + grad[1] ** 2) ** 2
    f_grad = [sp.diff(f, x) for x in xs]
    f_hess = [[sp.diff(f, x, y) for y in xs] for x in xs]
    return ManufacturedSolution(
        name=name, scale=scale, u=_compile(u), grad=_compile_list(grad),
        hess=_tensor(hess),
        f=_compile(f), f_grad=_compile_list(f_grad), f_hess=_tensor(f_hess))


def _tensor(rows):
    fns = [[_compile(e) for e in row] for row in rows]

    def call(x1, x2):
        return np.stack([np.stack([fn(x1, x2) for fn in row]) for row in fns])

    return call
