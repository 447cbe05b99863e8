"""Eigen-structure of small symmetric matrices and its matrix derivatives.

Indices are 0-based throughout: ``dTau[i, p, q]`` is the derivative of
component ``i`` of the eigenvector with respect to the entry ``W[p, q]``.

Derivative tensors come in two conventions:

``"entrywise"``
    every entry ``W[p, q]`` is an independent parameter, so ``W[p, q]`` and
    ``W[q, p]`` have separate (generally different) partial derivatives.
    The eigenvector is the unit right eigenvector of the perturbed,
    possibly non-symmetric, matrix.
``"symmetric"``
    derivatives along the symmetric directions ``E_pq + E_qp`` (``p != q``)
    and ``E_pp``.  Only these perturbations keep ``W`` symmetric, so this is
    what a finite-difference oracle can measure.  Arrays are filled
    symmetrically in each index pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import ortho_group

from .errors import DegenerateGapError, InputError

SYMMETRY_RTOL = 1e-12
DIAGONAL_ATOL = 1e-14
# relative tolerance when deciding which component is "largest" for the sign convention
PIVOT_RTOL = 1e-12


def _readonly(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SymMatrix:
    """A finite, exactly symmetric real matrix."""

    entries: np.ndarray

    def __post_init__(self):
        w = np.array(self.entries, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 2:
            raise InputError(f"expected a square matrix of size >= 2, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise InputError("matrix has non-finite entries")
        asym = np.max(np.abs(w - w.T))
        if asym > SYMMETRY_RTOL * (1.0 + np.max(np.abs(w))):
            raise InputError(f"matrix is not symmetric (max |W - W^T| = {asym:.3e})")
        object.__setattr__(self, "entries", _readonly(0.5 * (w + w.T)))

    @property
    def n(self):
        return self.entries.shape[0]

    @property
    def norm(self):
        """Spectral norm."""
        return float(np.linalg.norm(self.entries, 2))

    def is_diagonal(self, atol=DIAGONAL_ATOL):
        off = self.entries - np.diag(np.diag(self.entries))
        return bool(np.max(np.abs(off)) < atol)


def as_sym(w):
    return w if isinstance(w, SymMatrix) else SymMatrix(w)


@dataclass(frozen=True)
class EigenSystem:
    """Eigenvalues in descending order with matching unit eigenvectors (columns)."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "eigenvalues", _readonly(self.eigenvalues))
        object.__setattr__(self, "eigenvectors", _readonly(self.eigenvectors))

    @property
    def n(self):
        return self.eigenvalues.shape[0]

    @property
    def gap(self):
        lam = self.eigenvalues
        return float(np.min(lam[:-1] - lam[1:]))

    def vector(self, k):
        return self.eigenvectors[:, k]

    def gap_of(self, k):
        """Distance from eigenvalue ``k`` to the nearest other eigenvalue."""
        others = np.delete(self.eigenvalues, k)
        return float(np.min(np.abs(self.eigenvalues[k] - others)))

    def reconstruct(self):
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def orient(vectors, rtol=PIVOT_RTOL):
    """Flip columns so the largest-magnitude component is positive.

    Components within ``rtol`` of the largest magnitude count as ties, and the
    lowest index among them decides the sign.  Works on stacks ``(..., n, m)``.
    """
    v = np.asarray(vectors, dtype=float)
    mag = np.abs(v)
    top = mag.max(axis=-2, keepdims=True)
    pivot = np.argmax(mag >= top * (1.0 - rtol), axis=-2)
    picked = np.take_along_axis(v, pivot[..., None, :], axis=-2)
    signs = np.where(picked < 0, -1.0, 1.0)
    return v * signs


def eigen_system(w):
    """Sorted, sign-normalised eigen-decomposition of a symmetric matrix."""
    w = as_sym(w)
    a = w.entries
    off = a - np.diag(np.diag(a))
    if not np.any(off):
        d = np.diag(a)
        order = np.argsort(-d, kind="stable")
        return EigenSystem(d[order], np.eye(w.n)[:, order])
    lam, vec = np.linalg.eigh(a)
    return EigenSystem(lam[::-1], orient(vec[:, ::-1]))


def eig2x2(a, b, d):
    """Vectorised closed-form eigen-decomposition of ``[[a, b], [b, d]]``.

    Returns ``(lam1, lam2, tau)`` with ``lam1 >= lam2`` and ``tau[..., :]`` the
    unit eigenvector for ``lam1`` (unoriented; NaN where ``lam1 == lam2``).
    The eigenvector is built from whichever row of ``W - lam1 I`` avoids
    cancellation: ``((a - d + s)/2, b)`` when ``a >= d``, else
    ``(b, (d - a + s)/2)``, where ``s = sqrt((a - d)^2 + 4 b^2)``.
    """
    a, b, d = np.broadcast_arrays(*(np.asarray(x, dtype=float) for x in (a, b, d)))
    s = np.hypot(a - d, 2.0 * b)
    tr = a + d
    lam1 = 0.5 * (tr + s)
    lam2 = 0.5 * (tr - s)
    upper = a >= d
    v1 = np.where(upper, 0.5 * (a - d + s), b)
    v2 = np.where(upper, b, 0.5 * (d - a + s))
    with np.errstate(invalid="ignore", divide="ignore"):
        nrm = np.hypot(v1, v2)
        tau = np.stack([v1 / nrm, v2 / nrm], axis=-1)
    tau = np.where((s == 0)[..., None], np.nan, tau)
    return lam1, lam2, tau


def closed_form_2x2(w):
    """Eigen-system of a 2x2 symmetric matrix from the explicit root formulas."""
    w = as_sym(w)
    if w.n != 2:
        raise InputError(f"closed_form_2x2 needs a 2x2 matrix, got n={w.n}")
    (a, b), (_, d) = w.entries
    lam1, lam2, tau = eig2x2(a, b, d)
    if lam1 == lam2:
        raise DegenerateGapError("repeated eigenvalue: eigenvector direction undefined",
                                 pair=(0, 1), gap=0.0)
    t1 = np.asarray(tau, dtype=float)
    vecs = np.column_stack([t1, [-t1[1], t1[0]]])
    return EigenSystem(np.array([lam1, lam2], dtype=float), orient(vecs))


@dataclass(frozen=True)
class EigenDerivatives:
    """First and second derivatives of one eigenpair with respect to matrix entries."""

    k: int
    eigenvalue: float
    eigenvector: np.ndarray
    dLambda: np.ndarray
    dTau: np.ndarray
    d2Lambda: np.ndarray
    d2Tau: np.ndarray
    frame: np.ndarray
    convention: str = "entrywise"
    meta: dict = field(default_factory=dict, compare=False)


def default_gap_tolerance(w):
    return 1e-8 * (1.0 + as_sym(w).norm)


def _check_gap(es, k, tol):
    lam = es.eigenvalues
    for i in range(es.n):
        if i != k and abs(lam[k] - lam[i]) <= tol:
            raise DegenerateGapError(
                f"eigenvalues {k} and {i} collide (gap {abs(lam[k] - lam[i]):.3e} <= {tol:.3e})",
                pair=(k, i), gap=float(abs(lam[k] - lam[i])))


def _frame_derivatives(lam, j):
    """Derivative tensors at a diagonal matrix with diagonal ``lam``, eigenpair ``j``.

    These are the textbook values: all quantities vanish except the entries
    listed below (``i, q != j``, ``i != q``).
    """
    n = lam.shape[0]
    inv = np.zeros(n)
    mask = np.arange(n) != j
    inv[mask] = 1.0 / (lam[j] - lam[mask])

    d_lam = np.zeros((n, n))
    d_lam[j, j] = 1.0

    d_tau = np.zeros((n, n, n))
    d2_lam = np.zeros((n, n, n, n))
    d2_tau = np.zeros((n, n, n, n, n))
    others = [i for i in range(n) if i != j]
    for i in others:
        d_tau[i, i, j] = inv[i]
        d2_lam[j, i, i, j] = inv[i]
        d2_lam[i, j, j, i] = inv[i]
        # normalisation keeps the pivot component stationary to first order
        d2_tau[j, i, j, i, j] = -inv[i] ** 2
        d2_tau[i, i, j, i, i] = inv[i] ** 2
        d2_tau[i, i, i, i, j] = inv[i] ** 2
        d2_tau[i, i, j, j, j] = -inv[i] ** 2
        d2_tau[i, j, j, i, j] = -inv[i] ** 2
        for q in others:
            if q != i:
                d2_tau[i, i, q, q, j] = inv[i] * inv[q]
                d2_tau[i, q, j, i, q] = inv[i] * inv[q]
    return d_lam, d_tau, d2_lam, d2_tau


def eigen_derivatives(w, k, gap_tolerance=None):
    """Derivatives of the ``k``-th (descending) eigenpair of ``w``.

    At a diagonal matrix the tabulated values are returned directly, using
    the diagonal entries as eigenvalues.  Otherwise the formulas are applied
    in the eigenframe ``Q`` and pulled back through ``W = Q D Q^T``, which is
    linear in ``W`` and therefore needs no curvature correction.
    """
    w = as_sym(w)
    n = w.n
    if not 0 <= k < n:
        raise InputError(f"eigen index {k} out of range for n={n}")
    tol = default_gap_tolerance(w) if gap_tolerance is None else float(gap_tolerance)
    es = eigen_system(w)
    _check_gap(es, k, tol)

    if w.is_diagonal():
        lam = np.diag(w.entries).copy()
        j = int(np.argmax(np.abs(es.eigenvectors[:, k])))
        d_lam, d_tau, d2_lam, d2_tau = _frame_derivatives(lam, j)
        frame = np.eye(n)
        vec = frame[:, j]
    else:
        q = np.array(es.eigenvectors)
        d_lam, d_tau, d2_lam, d2_tau = _frame_derivatives(np.array(es.eigenvalues), k)
        d_lam = q @ d_lam @ q.T
        d_tau = np.einsum("im,mab,pa,qb->ipq", q, d_tau, q, q, optimize=True)
        d2_lam = np.einsum("abcd,pa,qb,rc,sd->pqrs", d2_lam, q, q, q, q, optimize=True)
        d2_tau = np.einsum("im,mabcd,pa,qb,rc,sd->ipqrs", q, d2_tau, q, q, q, q, optimize=True)
        frame = q
        vec = q[:, k]

    return EigenDerivatives(
        k=k, eigenvalue=float(es.eigenvalues[k]), eigenvector=_readonly(vec),
        dLambda=_readonly(d_lam), dTau=_readonly(d_tau),
        d2Lambda=_readonly(d2_lam), d2Tau=_readonly(d2_tau),
        frame=_readonly(frame), convention="entrywise")


def symmetric_directions(n):
    """Index pairs ``p <= q`` and the matching unit symmetric perturbations."""
    pairs = [(p, q) for p in range(n) for q in range(p, n)]
    basis = np.zeros((len(pairs), n, n))
    for a, (p, q) in enumerate(pairs):
        basis[a, p, q] = 1.0
        basis[a, q, p] = 1.0
    return pairs, basis


def _scatter1(values, pairs, n, lead=()):
    out = np.zeros(lead + (n, n))
    for a, (p, q) in enumerate(pairs):
        out[..., p, q] = values[..., a]
        out[..., q, p] = values[..., a]
    return out


def _scatter2(values, pairs, n, lead=()):
    out = np.zeros(lead + (n, n, n, n))
    for a, (p, q) in enumerate(pairs):
        for b, (r, s) in enumerate(pairs):
            v = values[..., a, b]
            for pp, qq in {(p, q), (q, p)}:
                for rr, ss in {(r, s), (s, r)}:
                    out[..., pp, qq, rr, ss] = v
    return out


def to_symmetric(der):
    """Collapse entrywise derivatives onto the symmetric directions."""
    if der.convention == "symmetric":
        return der
    n = der.dLambda.shape[0]
    pairs, basis = symmetric_directions(n)
    d1 = np.einsum("apq,pq->a", basis, der.dLambda)
    t1 = np.einsum("apq,ipq->ia", basis, der.dTau)
    d2 = np.einsum("apq,brs,pqrs->ab", basis, basis, der.d2Lambda, optimize=True)
    t2 = np.einsum("apq,brs,ipqrs->iab", basis, basis, der.d2Tau, optimize=True)
    return EigenDerivatives(
        k=der.k, eigenvalue=der.eigenvalue, eigenvector=der.eigenvector,
        dLambda=_readonly(_scatter1(d1, pairs, n)),
        dTau=_readonly(_scatter1(t1, pairs, n, (n,))),
        d2Lambda=_readonly(_scatter2(d2, pairs, n)),
        d2Tau=_readonly(_scatter2(t2, pairs, n, (n,))),
        frame=der.frame, convention="symmetric", meta=dict(der.meta))


def _perturbed_stack(a, basis, h):
    d = basis.shape[0]
    mats = [a]
    for s in (1.0, -1.0):
        mats.extend(a + s * h * basis)
    index = {}
    for x in range(d):
        for y in range(x + 1, d):
            for sx in (1.0, -1.0):
                for sy in (1.0, -1.0):
                    index[(x, y, sx, sy)] = len(mats)
                    mats.append(a + h * (sx * basis[x] + sy * basis[y]))
    return np.stack(mats), index


def _oracle_all(w, h):
    """Symmetric-direction finite differences for every eigenpair at once."""
    w = as_sym(w)
    n = w.n
    base = eigen_system(w)
    pairs, basis = symmetric_directions(n)
    d = len(pairs)
    stack, index = _perturbed_stack(np.array(w.entries), basis, h)
    lam, vec = np.linalg.eigh(stack)
    lam = lam[:, ::-1]
    vec = vec[:, :, ::-1]
    # align every perturbed branch with the unperturbed eigenvector
    dots = np.einsum("sik,ik->sk", vec, base.eigenvectors)
    vec = vec * np.where(dots < 0, -1.0, 1.0)[:, None, :]

    f0l, f0v = lam[0], vec[0]
    plus_l, minus_l = lam[1:1 + d], lam[1 + d:1 + 2 * d]
    plus_v, minus_v = vec[1:1 + d], vec[1 + d:1 + 2 * d]

    first_l = (plus_l - minus_l) / (2 * h)                      # (d, k)
    first_v = (plus_v - minus_v) / (2 * h)                      # (d, i, k)
    sec_l = np.zeros((d, d, n))
    sec_v = np.zeros((d, d, n, n))
    for x in range(d):
        sec_l[x, x] = (plus_l[x] - 2 * f0l + minus_l[x]) / h ** 2
        sec_v[x, x] = (plus_v[x] - 2 * f0v + minus_v[x]) / h ** 2
        for y in range(x + 1, d):
            pp, pm = index[(x, y, 1.0, 1.0)], index[(x, y, 1.0, -1.0)]
            mp, mm = index[(x, y, -1.0, 1.0)], index[(x, y, -1.0, -1.0)]
            vl = (lam[pp] - lam[pm] - lam[mp] + lam[mm]) / (4 * h * h)
            vv = (vec[pp] - vec[pm] - vec[mp] + vec[mm]) / (4 * h * h)
            sec_l[x, y] = sec_l[y, x] = vl
            sec_v[x, y] = sec_v[y, x] = vv
    return base, pairs, first_l, first_v, sec_l, sec_v


def perturbation_oracle(w, k, h=1e-5):
    """Central finite-difference estimate of the derivatives of eigenpair ``k``.

    Only symmetric perturbations are applied, so the result is in the
    ``"symmetric"`` convention; compare with ``to_symmetric(eigen_derivatives(...))``.
    """
    w = as_sym(w)
    if not 1e-7 <= h <= 1e-3:
        raise InputError(f"step h={h} outside [1e-7, 1e-3]")
    es = eigen_system(w)
    if not 0 <= k < es.n:
        raise InputError(f"eigen index {k} out of range for n={es.n}")
    _check_gap(es, k, 10 * h)
    base, pairs, first_l, first_v, sec_l, sec_v = _oracle_all(w, h)
    return _oracle_pick(base, pairs, first_l, first_v, sec_l, sec_v, k, h)


def _oracle_pick(base, pairs, first_l, first_v, sec_l, sec_v, k, h):
    n = base.n
    return EigenDerivatives(
        k=k, eigenvalue=float(base.eigenvalues[k]), eigenvector=base.eigenvectors[:, k],
        dLambda=_readonly(_scatter1(first_l[:, k], pairs, n)),
        dTau=_readonly(_scatter1(first_v[:, :, k].T, pairs, n, (n,))),
        d2Lambda=_readonly(_scatter2(sec_l[:, :, k], pairs, n)),
        d2Tau=_readonly(_scatter2(np.moveaxis(sec_v[:, :, :, k], 2, 0), pairs, n, (n,))),
        frame=base.eigenvectors, convention="symmetric", meta={"h": h})


def random_symmetric(rng, n, gap_min, bound=2.0):
    """Random symmetric matrix with spectrum in ``[-bound, bound]``.

    Eigenvalues are spread uniformly subject to a minimum separation
    ``gap_min``; one adjacent pair is then pinned at exactly ``gap_min`` so
    every sample sits on the boundary of the admissible set.  Since the
    spectral radius is at most ``bound``, so is every entry.
    """
    if gap_min < 0:
        raise InputError("gap_min must be non-negative")
    slack = 2.0 * bound - (n - 1) * gap_min
    if slack < 0:
        raise InputError(f"cannot fit {n} eigenvalues {gap_min} apart in [-{bound}, {bound}]")
    lam = -bound + np.sort(rng.uniform(0.0, slack, n)) + gap_min * np.arange(n)
    t = int(rng.integers(n - 1))
    lam[t + 1:] -= lam[t + 1] - lam[t] - gap_min
    q = ortho_group.rvs(n, random_state=rng)
    a = (q * lam) @ q.T
    return SymMatrix(0.5 * (a + a.T))


def oracle_suite(dims=(2, 3, 4, 5), n_matrices=100, gap_min=0.5, h=1e-5, seed=0,
                 bound=2.0, tol_first=1e-6, tol_second=1e-4):
    """Compare formula derivatives with the finite-difference oracle on random matrices.

    Returns a JSON-ready summary; ``summary["passed"]`` is the overall verdict.
    """
    rng = np.random.default_rng(seed)
    per_dim = {}
    worst = None
    n_degenerate = 0
    for n in dims:
        max1 = max2 = 0.0
        degenerate = 0
        for m in range(n_matrices):
            w = random_symmetric(rng, n, gap_min, bound)
            es = eigen_system(w)
            oracle = _oracle_all(w, h)
            for k in range(n):
                try:
                    _check_gap(es, k, max(10 * h, default_gap_tolerance(w)))
                    formula = to_symmetric(eigen_derivatives(w, k))
                except DegenerateGapError as exc:
                    degenerate += 1
                    # a degenerate pair outranks any finite discrepancy; keep the first one
                    if worst is None or np.isfinite(worst["score"]):
                        worst = {"score": math.inf, "n": n, "index": m, "k": k,
                                 "degenerate_pair": exc.pair and list(exc.pair), "gap": exc.gap,
                                 "matrix": np.array(w.entries).tolist()}
                    continue
                fd = _oracle_pick(*oracle, k, h)
                e1 = max(np.max(np.abs(formula.dLambda - fd.dLambda)),
                         np.max(np.abs(formula.dTau - fd.dTau)))
                e2 = max(np.max(np.abs(formula.d2Lambda - fd.d2Lambda)),
                         np.max(np.abs(formula.d2Tau - fd.d2Tau)))
                max1, max2 = max(max1, e1), max(max2, e2)
                score = max(e1 / tol_first, e2 / tol_second)
                if worst is None or score > worst["score"]:
                    worst = {"score": float(score), "n": n, "index": m, "k": k,
                             "first_error": float(e1), "second_error": float(e2),
                             "matrix": np.array(w.entries).tolist()}
        n_degenerate += degenerate
        per_dim[str(n)] = {"matrices": n_matrices, "max_first_error": float(max1),
                           "max_second_error": float(max2), "degenerate": degenerate}
    max_first = max(v["max_first_error"] for v in per_dim.values())
    max_second = max(v["max_second_error"] for v in per_dim.values())
    passed = n_degenerate == 0 and max_first <= tol_first and max_second <= tol_second
    return {
        "dims": list(dims), "n_matrices": n_matrices, "gap_min": gap_min, "h": h,
        "seed": seed, "bound": bound, "tol_first": tol_first, "tol_second": tol_second,
        "per_dim": per_dim, "max_first_error": max_first, "max_second_error": max_second,
        "degenerate": n_degenerate, "worst": worst, "passed": bool(passed),
    }
