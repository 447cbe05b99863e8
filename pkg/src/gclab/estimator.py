"""Auxiliary-function machinery for the interior second-derivative estimate.

On a discrete convex solution this module builds the top-eigenvector field
``tau``, the localisation set ``Sigma``, the cutoff ``eta``, the exponential
weight ``g`` and the test function ``phi = eta^beta g(|Du|^2/2) u_tau_tau``.
It locates the discrete maximum of ``phi``, checks the first-order and
differentiated-equation identities, and assembles a bound report at the
origin.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .eigensys import eig2x2, eigen_derivatives
from .errors import (DegenerateGapError, EmptySigmaError, GclabError, InputError,
                     OutOfDomainError, WeightRangeError)
from .fieldcalc import ScalarField, as_field, d1, fourth_fd, hessian_fd, third_fd

EPS = np.finfo(float).eps
MAX_EXPONENT = 700.0
N_DIRECTIONS = 16
REFERENCE_DIRECTION = (1.0, 0.0)


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class AuxiliaryConfig:
    """Constants of the test function.  ``c0`` defaults to ``32 / m``."""

    R: float
    m: float
    M: float
    beta: float = 4.0
    c0: float | None = None
    gap_floor: float = 1e-9
    strict_rim: bool = False

    def __post_init__(self):
        if not self.R > 0:
            raise InputError(f"R must be positive, got {self.R}")
        if not 0 < self.m <= self.M:
            raise InputError(f"need 0 < m <= M, got m={self.m}, M={self.M}")
        if not self.beta > 0:
            raise InputError("beta must be positive")
        if not self.gap_floor >= 0:
            raise InputError("gap_floor must be non-negative")
        for name in ("R", "m", "M", "beta", "gap_floor"):
            object.__setattr__(self, name, float(getattr(self, name)))
        c0 = 32.0 / self.m if self.c0 is None else float(self.c0)
        if not c0 > 0:
            raise InputError("c0 must be positive")
        object.__setattr__(self, "c0", c0)

    @property
    def r2(self):
        return self.R * self.R / 2.0

    @property
    def r(self):
        return self.R / math.sqrt(2.0)

    def weight(self):
        return ExponentialWeight(self.c0, self.r2)

    def as_dict(self):
        return dict(asdict(self), r2=self.r2)


# ---------------------------------------------------------------------------
# tau field, Sigma and eta


@dataclass(frozen=True)
class TauField:
    """Unit top eigenvector of the discrete Hessian at every node with a full
    stencil (``valid``).  Sign: ``tau_1 > 0``, or ``tau_1 = 0`` and ``tau_2 > 0``.
    Nodes with gap below ``gap_floor`` carry the reference direction and are
    flagged ``degenerate``."""

    grid: object
    tau: np.ndarray
    lam1: np.ndarray
    lam2: np.ndarray
    degenerate: np.ndarray
    valid: np.ndarray
    gap_floor: float

    @property
    def gap(self):
        return self.lam1 - self.lam2

    def at(self, i, j):
        if not self.valid[i, j]:
            raise OutOfDomainError(f"tau undefined at node ({i}, {j})")
        return self.tau[:, i, j].copy()


def _half_plane(t1, t2):
    flip = (t1 < 0) | ((t1 == 0) & (t2 < 0))
    return np.where(flip, -t1, t1), np.where(flip, -t2, t2)


def tau_field(u, gap_floor=1e-9):
    """Top eigenvector field of ``hessian_fd(u)``; ``gap_floor`` may also be
    passed as an :class:`AuxiliaryConfig`."""
    if isinstance(gap_floor, AuxiliaryConfig):
        gap_floor = gap_floor.gap_floor
    u = as_field(u)
    grid = u.grid
    hess = hessian_fd(u)
    lam1, lam2, vec = eig2x2(hess.u11, hess.u12, hess.u22)
    valid = grid.interior(1)
    degenerate = valid & ~((lam1 - lam2) >= gap_floor)
    t1, t2 = _half_plane(vec[..., 0], vec[..., 1])
    t1 = np.where(degenerate, REFERENCE_DIRECTION[0], t1)
    t2 = np.where(degenerate, REFERENCE_DIRECTION[1], t2)
    tau = np.where(valid, np.stack([t1, t2]), np.nan)
    for a in (tau, lam1, lam2, degenerate, valid):
        a.flags.writeable = False
    return TauField(grid, tau, lam1, lam2, degenerate, valid, float(gap_floor))


def eta_factors(x, tau, r2):
    """``(r^2 - |x|^2 + <x,tau>^2, r^2 - <x,tau>^2)``; ``x`` and ``tau`` carry
    their two components on the first axis."""
    x = np.asarray(x, dtype=float)
    tau = np.asarray(tau, dtype=float)
    s = x[0] * tau[0] + x[1] * tau[1]
    s2 = s * s
    return r2 - (x[0] * x[0] + x[1] * x[1]) + s2, r2 - s2


def eta_value(x, tau, r2):
    a, b = eta_factors(x, tau, r2)
    return a * b


def _r2_of(config):
    return config.r2 if isinstance(config, AuxiliaryConfig) else float(config)


def eta_field(tau, config):
    """``eta`` at every node where ``tau`` is defined, NaN elsewhere."""
    x = np.stack(tau.grid.mesh)
    return eta_value(x, tau.tau, _r2_of(config))


def sigma_mask(tau, config):
    """Nodes of ``Sigma``: both cutoff factors strictly positive."""
    a, b = eta_factors(np.stack(tau.grid.mesh), tau.tau, _r2_of(config))
    with np.errstate(invalid="ignore"):
        return tau.valid & (a > 0) & (b > 0)


def sigma_membership(node, tau, config):
    i, j = node
    a, b = eta_factors(tau.grid.node(i, j), tau.at(i, j), _r2_of(config))
    return bool(a > 0 and b > 0)


def eta_eval(node, tau, config):
    i, j = node
    return float(eta_value(tau.grid.node(i, j), tau.at(i, j), _r2_of(config)))


# ---------------------------------------------------------------------------
# weight


@dataclass(frozen=True)
class ExponentialWeight:
    """``g(t) = exp(c0 t / r^2)`` with its first two derivatives."""

    c0: float
    r2: float

    @property
    def rate(self):
        """``g'/g``, a constant."""
        return self.c0 / self.r2

    def exponent(self, t):
        return self.rate * np.asarray(t, dtype=float)

    def _exp(self, t):
        e = self.exponent(t)
        if np.any(e > MAX_EXPONENT):
            raise WeightRangeError(
                f"weight exponent {float(np.max(e)):.6g} exceeds {MAX_EXPONENT}",
                exponent=float(np.max(e)))
        return np.exp(e)

    def g(self, t):
        return self._exp(t)

    def g1(self, t):
        return self.rate * self._exp(t)

    def g2(self, t):
        return self.rate * self.rate * self._exp(t)


def weight_g(t, config):
    return config.weight().g(t)


# ---------------------------------------------------------------------------
# phi and its maximum


@dataclass(frozen=True)
class PhiField:
    """``phi`` on ``Sigma`` (NaN elsewhere) with the pieces it is built from."""

    grid: object
    values: np.ndarray
    sigma: np.ndarray
    eta: np.ndarray
    t: np.ndarray
    u_tt: np.ndarray
    exponent: np.ndarray


def phi_eval(u, tau, config):
    u = as_field(u)
    hess = hessian_fd(u)
    sigma = sigma_mask(tau, config)
    eta = eta_field(tau, config)
    t = 0.5 * (hess.grad[0] ** 2 + hess.grad[1] ** 2)
    t1, t2 = tau.tau
    u_tt = t1 * t1 * hess.u11 + 2 * t1 * t2 * hess.u12 + t2 * t2 * hess.u22
    weight = config.weight()
    expo = np.where(sigma, weight.exponent(np.where(sigma, t, 0.0)), np.nan)
    with np.errstate(invalid="ignore"):
        bad = sigma & (expo > MAX_EXPONENT)
    if np.any(bad):
        node = tuple(int(k) for k in np.argwhere(bad)[0])
        raise WeightRangeError(
            f"weight exponent {expo[node]:.6g} exceeds {MAX_EXPONENT} at node {node}; "
            f"c0={config.c0:.6g}", node=node, exponent=float(expo[node]))
    with np.errstate(invalid="ignore"):
        vals = np.where(sigma, eta ** config.beta * np.exp(np.where(sigma, expo, 0.0)) * u_tt,
                        np.nan)
    return PhiField(u.grid, vals, sigma, eta, t, u_tt, expo)


@dataclass(frozen=True)
class ArgMax:
    node: tuple
    x: tuple
    value: float
    rim_adjacent: bool


def locate_interior_max(phi, grid=None):
    """Discrete maximum over ``Sigma``; the first node in row-major order wins ties.

    ``phi`` is a :class:`PhiField` or an array that is NaN off ``Sigma``.
    """
    if isinstance(phi, PhiField):
        grid, vals = phi.grid, phi.values
    else:
        vals = np.asarray(phi, dtype=float)
    inside = np.isfinite(vals)
    if not np.any(inside):
        raise EmptySigmaError("Sigma contains no grid nodes")
    flat = int(np.argmax(np.where(inside, vals, -np.inf)))
    i, j = np.unravel_index(flat, vals.shape)
    pad = np.pad(inside, 1, constant_values=False)
    rim = not bool(np.all(pad[i:i + 3, j:j + 3]))
    x = tuple(float(c) for c in grid.node(i, j)) if grid is not None else (float("nan"),) * 2
    return ArgMax((int(i), int(j)), x, float(vals[i, j]), rim)


# ---------------------------------------------------------------------------
# identity checks


def _frame(t):
    """Columns ``(tau, tau_perp)``: rotates grid axes onto the eigenframe."""
    return np.array([[t[0], -t[1]], [t[1], t[0]]])


def critical_point_residual(u11i, u11, eta_i, eta, rate, u_i, u_ii, beta=4.0):
    """``|u_11i/u_11 + beta eta_i/eta + (g'/g) u_i u_ii|``, elementwise."""
    return np.abs(np.asarray(u11i) / u11 + beta * np.asarray(eta_i) / eta
                  + rate * np.asarray(u_i) * np.asarray(u_ii))


@dataclass(frozen=True)
class CriticalPointResult:
    node: tuple
    residual: tuple | None
    skipped: bool
    reason: str = ""
    terms: dict = field(default_factory=dict)


def critical_point_check(u, tau, config, x0):
    """First-order condition for ``log phi`` at ``x0``, in the frame that
    diagonalises the discrete Hessian there (``lambda_1`` first)."""
    u = as_field(u)
    grid = u.grid
    i, j = x0 if not isinstance(x0, ArgMax) else x0.node
    node = (int(i), int(j))
    if grid.ring()[i, j] < 2:
        return CriticalPointResult(node, None, True, "node too close to the grid boundary")
    sigma = sigma_mask(tau, config)
    if not sigma[i, j]:
        return CriticalPointResult(node, None, True, "node outside Sigma")
    if not np.all(sigma[i - 1:i + 2, j - 1:j + 2]):
        return CriticalPointResult(node, None, True, "node on the rim of Sigma")
    if np.any(tau.degenerate[i - 1:i + 2, j - 1:j + 2]):
        return CriticalPointResult(node, None, True, "degenerate eigenvalue gap")
    hess = hessian_fd(u)
    T = third_fd(hess)[:, :, :, i, j]
    eta = eta_field(tau, config)
    h = grid.h
    grad_eta = np.array([(eta[i + 1, j] - eta[i - 1, j]) / (2 * h),
                         (eta[i, j + 1] - eta[i, j - 1]) / (2 * h)])
    q = _frame(tau.at(i, j))
    lam = np.array([tau.lam1[i, j], tau.lam2[i, j]])
    t = q[:, 0]
    u11i = np.einsum("abc,a,b,ci->i", T, t, t, q)
    eta_i = grad_eta @ q
    u_i = hess.grad[:, i, j] @ q
    rate = config.weight().rate
    res = critical_point_residual(u11i, lam[0], eta_i, eta[i, j], rate, u_i, lam, config.beta)
    terms = {"u11i_over_u11": (u11i / lam[0]).tolist(),
             "beta_eta_i_over_eta": (config.beta * eta_i / eta[i, j]).tolist(),
             "weight_term": (rate * u_i * lam).tolist()}
    return CriticalPointResult(node, tuple(float(r) for r in res), False, "", terms)


@dataclass(frozen=True)
class IdentityCheck:
    """Pointwise ``|LHS - RHS|`` of an identity over admissible nodes."""

    name: str
    residual: np.ndarray
    admissible: np.ndarray
    sup: float
    floor: float
    margin: int

    def summary(self):
        return {"sup": self.sup, "floor": self.floor, "margin": self.margin,
                "nodes": int(np.count_nonzero(self.admissible))}


def _source(data):
    """Analytic ``f`` provider: a ManufacturedSolution or a ProblemSpec carrying one."""
    src = getattr(data, "exact", data)
    if src is None or not hasattr(src, "on"):
        raise InputError("identity checks need analytic f (a manufactured solution)")
    return src


def _admissible(grid, margin, *arrays):
    mask = grid.ring() >= margin
    for a in arrays:
        mask &= np.all(np.isfinite(a.reshape(-1, *grid.shape)), axis=0)
    return mask


def _sup(res, mask):
    return float(np.max(res[..., mask])) if np.any(mask) else float("nan")


def equation_check(u, spec):
    """``|lambda_1 lambda_2 - f (1 + |Du|^2)^2|`` on equation nodes, with the grid ``f``."""
    u = as_field(u)
    hess = hessian_fd(u)
    lam1, lam2, _ = hess.eigen()
    p = 1.0 + hess.grad[0] ** 2 + hess.grad[1] ** 2
    res = np.abs(lam1 * lam2 - spec.f.values * p * p)
    mask = spec.equation_mask
    return IdentityCheck("equation", np.where(mask, res, np.nan), mask, _sup(res, mask),
                         float("nan"), 2)


def differentiated_equation_check(u, data, margin=3):
    """``sum_pq F^pq u_pqi`` against ``d_i [f (1 + |Du|^2)^2]`` with analytic ``f``."""
    u = as_field(u)
    grid = u.grid
    src = _source(data)
    hess = hessian_fd(u)
    T = third_fd(hess)
    f = src.on(grid, "f")
    fg = src.on(grid, "f_grad")
    g = hess.grad
    H = np.moveaxis(hess.matrices, (2, 3), (0, 1))
    F = _cofactor(H)
    p = 1.0 + g[0] ** 2 + g[1] ** 2
    lhs = np.einsum("pq...,pqi...->i...", F, T)
    p_i = 2.0 * np.einsum("k...,ki...->i...", g, H)
    rhs = fg * p * p + 2.0 * f * p * p_i
    res = np.abs(lhs - rhs)
    mask = _admissible(grid, margin, res)
    floor = _floor(u, F, grid.h, 3)
    return IdentityCheck("differentiated_equation", np.where(mask, res, np.nan), mask,
                         _sup(res, mask), floor, margin)


def _cofactor(H):
    """Cofactor of a stacked symmetric 2x2 field: derivative of ``det`` in each entry."""
    return np.stack([np.stack([H[1, 1], -H[1, 0]]), np.stack([-H[0, 1], H[0, 0]])])


def _floor(u, F, h, order):
    """Roundoff estimate for a difference identity of derivative order ``order``."""
    scale = float(np.max(np.abs(u.values)))
    coef = 1.0 + float(np.nanmax(np.abs(F)))
    return float(EPS * scale * coef * 2.0 ** order / h ** order)


def d2det_tensor():
    """``d^2 det W / dW_pq dW_rs`` for 2x2 ``W`` with independent entries."""
    d = np.zeros((2, 2, 2, 2))
    d[0, 0, 1, 1] = d[1, 1, 0, 0] = 1.0
    d[0, 1, 1, 0] = d[1, 0, 0, 1] = -1.0
    return d


def second_variation_terms(H, T, Q):
    """Pieces of ``d_ij det`` at one node.

    ``H[p, q]``, ``T[p, q, i]`` and ``Q[p, q, i, j]`` hold second, third and
    fourth derivatives.  Returns ``cofactor_fourth[i, j] = sum F^pq u_pqij`` and
    ``quadratic_third[i, j] = sum d2det[pq, rs] u_pqi u_rsj``.  At a node with
    diagonal ``H`` and ``i = j = 0``, moving ``quadratic_third`` to the right
    gives ``-2 u_111 u_221 + 2 u_112^2``.
    """
    F = _cofactor(np.asarray(H))
    return {"cofactor_fourth": np.einsum("pq,pqij->ij", F, Q),
            "quadratic_third": np.einsum("pqrs,pqi,rsj->ij", d2det_tensor(), T, T)}


def det_second_variation_check(u, data, margin=4):
    """``d_ij det D^2 u`` in cofactor form against ``d_ij [f (1 + |Du|^2)^2]``."""
    u = as_field(u)
    grid = u.grid
    if grid.n_cells < 2 * margin + 2:
        raise InputError(f"grid too coarse for a {margin}-node margin")
    src = _source(data)
    hess = hessian_fd(u)
    T = third_fd(hess)
    Q = fourth_fd(hess)
    H = np.moveaxis(hess.matrices, (2, 3), (0, 1))
    F = _cofactor(H)
    lhs = (np.einsum("pq...,pqij...->ij...", F, Q)
           + np.einsum("pqrs,pqi...,rsj...->ij...", d2det_tensor(), T, T))
    f = src.on(grid, "f")
    fg = src.on(grid, "f_grad")
    fh = src.on(grid, "f_hess")
    g = hess.grad
    p = 1.0 + g[0] ** 2 + g[1] ** 2
    p_i = 2.0 * np.einsum("k...,ki...->i...", g, H)
    p_ij = 2.0 * (np.einsum("ki...,kj...->ij...", H, H) + np.einsum("k...,kij...->ij...", g, T))
    G = p * p
    G_i = 2.0 * p * p_i
    G_ij = 2.0 * (p_i[:, None] * p_i[None, :] + p * p_ij)
    rhs = fh * G + fg[:, None] * G_i[None, :] + fg[None, :] * G_i[:, None] + f * G_ij
    res = np.abs(lhs - rhs)
    mask = _admissible(grid, margin, res)
    floor = _floor(u, F, grid.h, 4)
    return IdentityCheck("det_second_variation", np.where(mask, res, np.nan), mask,
                         _sup(res, mask), floor, margin)


def _aligned_tau_gradient(tau, i, j):
    """Centred differences of ``tau`` with neighbours flipped onto ``tau(i, j)``."""
    h = tau.grid.h
    c = tau.tau[:, i, j]
    out = np.empty((2, 2))  # [m, k] = d tau_m / d x_k
    for k, (di, dj) in enumerate(((1, 0), (0, 1))):
        up = tau.tau[:, i + di, j + dj]
        dn = tau.tau[:, i - di, j - dj]
        up = up if up @ c >= 0 else -up
        dn = dn if dn @ c >= 0 else -dn
        out[:, k] = (up - dn) / (2 * h)
    return out


def _tau_nodes(tau, min_gap, margin=2):
    grid = tau.grid
    ok = (grid.ring() >= margin) & tau.valid & ~tau.degenerate & (tau.gap >= min_gap)
    deg = np.pad(tau.degenerate, 1, constant_values=True)
    n1 = grid.n_cells + 1
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            ok &= ~deg[1 + di:1 + di + n1, 1 + dj:1 + dj + n1]
    return ok


@dataclass(frozen=True)
class TauCheck:
    name: str
    residual: np.ndarray
    admissible: np.ndarray
    sup: float
    skipped: bool
    reason: str = ""

    def summary(self):
        return {"sup": self.sup, "skipped": self.skipped, "reason": self.reason,
                "nodes": int(np.count_nonzero(self.admissible))}


def tau_directional_check(u, tau, min_gap=None):
    """``<x, d_i tau>`` from differences of the ``tau`` field against
    ``x_2 u_12i / (lambda_1 - lambda_2)`` in the local eigenframe."""
    u = as_field(u)
    grid = u.grid
    min_gap = 10.0 * tau.gap_floor if min_gap is None else float(min_gap)
    ok = _tau_nodes(tau, min_gap)
    res = np.full((2,) + grid.shape, np.nan)
    if not np.any(ok):
        return TauCheck("tau_directional", res, ok, float("nan"), True, "no non-degenerate nodes")
    T = third_fd(hessian_fd(u))
    x = np.stack(grid.mesh)
    for i, j in zip(*np.nonzero(ok)):
        q = _frame(tau.tau[:, i, j])
        dtau = _aligned_tau_gradient(tau, i, j) @ q        # [m, rotated i]
        xr = q.T @ x[:, i, j]
        lhs = x[:, i, j] @ dtau
        u12i = np.einsum("abc,a,b,ci->i", T[:, :, :, i, j], q[:, 0], q[:, 1], q)
        rhs = xr[1] * u12i / tau.gap[i, j]
        res[:, i, j] = np.abs(lhs - rhs)
    return TauCheck("tau_directional", res, ok, _sup(res, ok), False)


def tau_chain_rule(hess_matrix, third, tau_ref):
    """``d_k tau_m = sum_pq (d tau_m / d W_pq) u_pqk`` via the eigen-derivative
    formulas; the result follows the sign of ``tau_ref``."""
    der = eigen_derivatives(hess_matrix, 0)
    sign = 1.0 if der.eigenvector @ tau_ref >= 0 else -1.0
    return sign * np.einsum("mpq,pqk->mk", der.dTau, third)


def tau_chain_rule_check(u, tau, min_gap=None, nodes=None, max_nodes=400):
    """Largest gap between the differenced ``tau`` field and the chain-rule value.

    Without explicit ``nodes`` an evenly spaced sample of at most ``max_nodes``
    admissible nodes is used.
    """
    u = as_field(u)
    grid = u.grid
    min_gap = 10.0 * tau.gap_floor if min_gap is None else float(min_gap)
    ok = _tau_nodes(tau, min_gap)
    res = np.full(grid.shape, np.nan)
    hess = hessian_fd(u)
    T = third_fd(hess)
    H = hess.matrices
    if nodes is None:
        cand = np.argwhere(ok)
        pick = np.unique(np.linspace(0, len(cand) - 1, min(max_nodes, len(cand))).astype(int))
        todo = [tuple(cand[k]) for k in pick] if len(cand) else []
    else:
        todo = [tuple(n) for n in nodes if ok[tuple(n)]]
    for i, j in todo:
        try:
            chain = tau_chain_rule(H[i, j], T[:, :, :, i, j], tau.tau[:, i, j])
        except DegenerateGapError:
            continue
        res[i, j] = float(np.max(np.abs(chain - _aligned_tau_gradient(tau, i, j))))
    done = np.isfinite(res)
    return TauCheck("tau_chain_rule", res, done, _sup(res, done), not np.any(done),
                    "" if np.any(done) else "no non-degenerate nodes")


# ---------------------------------------------------------------------------
# report


def directions(n=N_DIRECTIONS):
    k = np.arange(n)
    return np.stack([np.cos(k * np.pi / n), np.sin(k * np.pi / n)], axis=1)


def measured_bounds(f, mask):
    """``(min f, max f)`` over ``mask``."""
    vals = np.asarray(f)[mask]
    if vals.size == 0:
        raise EmptySigmaError("no nodes to measure f on")
    return float(np.min(vals)), float(np.max(vals))


def auxiliary_config(u, spec, R=None, m=None, M=None, **kw):
    """Config whose ``m, M`` default to the range of ``f`` over ``Sigma``.

    ``Sigma`` depends only on ``tau`` and ``R``, so measuring there is not circular.
    """
    R = spec.R if R is None else float(R)
    if m is None or M is None:
        tau = tau_field(u, kw.get("gap_floor", 1e-9))
        sig = sigma_mask(tau, R * R / 2.0)
        lo, hi = measured_bounds(spec.f.values, sig)
        m = lo if m is None else m
        M = hi if M is None else M
    return AuxiliaryConfig(R=R, m=m, M=M, **kw)


def constants_digest(u, spec):
    """``m, M, R, sup|Df|, sup|D^2 f|, sup|Du|`` measured on the closed ball ``B_R``."""
    u = as_field(u)
    grid = u.grid
    h = grid.h
    fv = spec.f.values
    ball = (grid.radius2() <= spec.R ** 2 * (1 + 1e-12)) & grid.interior(1)
    fh = hessian_fd(ScalarField(grid, fv))
    gf = np.hypot(fh.grad[0], fh.grad[1])
    # spectral norm of a symmetric 2x2
    l1, l2, _ = eig2x2(fh.u11, fh.u12, fh.u22)
    hf = np.maximum(np.abs(l1), np.abs(l2))
    gu = np.hypot(d1(u.values, 0, h), d1(u.values, 1, h))
    m, M = measured_bounds(fv, ball)
    return {"m": m, "M": M, "R": float(spec.R), "sup_grad_f": float(np.max(gf[ball])),
            "sup_hess_f": float(np.max(hf[ball])), "sup_grad_u": float(np.max(gu[ball]))}


@dataclass(frozen=True)
class EstimateReport:
    x0: tuple
    x0_node: tuple
    phi_max: float
    eta_lambda1_max: float
    u_tau_tau_origin: float
    bound_at_origin: float
    identity_residuals: dict
    constants_digest: dict
    tau_origin: tuple
    origin_degenerate: bool
    rim_adjacent: bool
    directional: tuple
    chain_holds: bool
    sigma_nodes: int
    config: dict
    grid: dict

    def as_dict(self):
        return asdict(self)


def bound_report(u, config, spec=None):
    """Evaluate ``phi``, locate its maximum and check the bound chain at the origin.

    ``spec`` supplies ``f``; identity checks needing analytic ``f`` run only when
    it carries a manufactured solution.
    """
    u = as_field(u)
    grid = u.grid
    tau = tau_field(u, config.gap_floor)
    phi = phi_eval(u, tau, config)
    top = locate_interior_max(phi)
    hess = hessian_fd(u)
    sigma = phi.sigma
    eta_l1 = float(np.max((phi.eta * tau.lam1)[sigma]))

    o = grid.origin
    if not sigma[o]:
        raise EmptySigmaError("origin not in Sigma")
    t0 = tau.at(*o)
    H0 = hess.matrices[o]
    u_tt0 = float(t0 @ H0 @ t0)
    bound = top.value / config.r2 ** (2 * config.beta)
    xis = directions()
    uxx = np.einsum("ka,ab,kb->k", xis, H0, xis)
    chain = bool(np.all(uxx <= u_tt0 + 1e-12 * (1 + abs(u_tt0))) and u_tt0 <= bound + 1e-12)

    checks = {}
    cp = critical_point_check(u, tau, config, top)
    checks["critical_point"] = None if cp.skipped else list(cp.residual)
    if spec is not None:
        checks["equation"] = equation_check(u, spec).sup
        if getattr(spec, "exact", None) is not None:
            checks["differentiated_equation"] = differentiated_equation_check(u, spec).sup
            if grid.n_cells >= 10:
                checks["det_second_variation"] = det_second_variation_check(u, spec).sup
    td = tau_directional_check(u, tau)
    checks["tau_directional"] = None if td.skipped else td.sup

    digest = constants_digest(u, spec) if spec is not None else {}
    return EstimateReport(
        x0=top.x, x0_node=top.node, phi_max=top.value, eta_lambda1_max=eta_l1,
        u_tau_tau_origin=u_tt0, bound_at_origin=float(bound), identity_residuals=checks,
        constants_digest=digest, tau_origin=tuple(float(c) for c in t0),
        origin_degenerate=bool(tau.degenerate[o]), rim_adjacent=top.rim_adjacent,
        directional=tuple(float(v) for v in uxx), chain_holds=chain,
        sigma_nodes=int(np.count_nonzero(sigma)), config=config.as_dict(),
        grid=grid.metadata())


def parameter_sweep(name, radii=(1.0,), levels=(64,), scales=(1.0,), solver_config=None,
                    beta=4.0, gap_floor=1e-9):
    """Solve and report each ``(R, n_cells, scale)`` instance of a manufactured family.

    Failed instances are kept as rows with ``status`` set to the error class.
    """
    from .solver import newton_solve, problem_from_manufactured

    rows = []
    for R in radii:
        for n in levels:
            for s in scales:
                row = {"name": name, "R": float(R), "n_cells": int(n), "scale": float(s),
                       "r2": float(R) * float(R) / 2.0}
                try:
                    spec = problem_from_manufactured(name, R=R, n_cells=n, scale=s)
                    st = newton_solve(spec, solver_config)
                    if not st.converged:
                        raise _SolveFailed(st.reason)
                    cfg = auxiliary_config(st.u, spec, beta=beta, gap_floor=gap_floor)
                    rep = bound_report(st.u, cfg, spec)
                except (GclabError, _SolveFailed) as exc:
                    row.update(status=type(exc).__name__, error=str(exc))
                    rows.append(row)
                    continue
                row.update({f"digest_{k}": v for k, v in rep.constants_digest.items() if k != "R"})
                row.update(m=cfg.m, M=cfg.M, c0=cfg.c0, eta_lambda1_max=rep.eta_lambda1_max,
                           phi_max=rep.phi_max, u_tau_tau_origin=rep.u_tau_tau_origin,
                           bound_at_origin=rep.bound_at_origin, chain_holds=rep.chain_holds,
                           status="ok", error="")
                rows.append(row)
    return rows


class _SolveFailed(Exception):
    pass
