import numpy as np
import pytest
import scipy.sparse as sps
from conftest import exact_field, solved
from hypothesis import given, settings
from hypothesis import strategies as st

from gclab.errors import InputError, StudyError
from gclab.fieldcalc import Grid2D, ScalarField, hessian_fd
from gclab.solver import (ProblemSpec, SolverConfig, _Singular, _solve, convergence_study,
                          convexity_margin, initial_guess, jacobian_assemble, newton_solve,
                          problem_from_manufactured, quadratic_fit, residual,
                          smooth_perturbation, sup_error)


def test_problem_spec_validation():
    spec = problem_from_manufactured("cosh", n_cells=16)
    with pytest.raises(InputError):
        ProblemSpec(R=1.0, grid=spec.grid, f=spec.f, boundary=spec.boundary, m=2.0, M=3.0)
    with pytest.raises(InputError):
        ProblemSpec(R=1.0, grid=spec.grid, f=spec.f, boundary=spec.boundary, m=0.0, M=1.0)
    bad = np.array(spec.boundary)
    bad[0, 0] = np.nan
    with pytest.raises(InputError):
        ProblemSpec(R=1.0, grid=spec.grid, f=spec.f, boundary=bad, m=spec.m, M=spec.M)
    with pytest.raises(InputError):
        problem_from_manufactured("cosh", R=2.0, half_width=1.0, n_cells=16)


@pytest.mark.parametrize("kw", [{"max_iterations": 0}, {"residual_tolerance": 0.0},
                                {"initial_guess": "zero"}])
def test_solver_config_validation(kw):
    with pytest.raises(InputError):
        SolverConfig(**kw)


# --- residual ---------------------------------------------------------------


def test_residual_exact_quadratic():
    spec = problem_from_manufactured("aniso-quadratic", n_cells=64)
    assert np.max(np.abs(residual(exact_field(spec), spec).values)) < 1e-13


def test_residual_exact_cosh_is_second_order():
    sups = []
    for n in (32, 64, 128):
        spec = problem_from_manufactured("cosh", n_cells=n)
        sups.append(np.max(np.abs(residual(exact_field(spec), spec).values)))
    ratios = np.array(sups[:-1]) / np.array(sups[1:])
    assert np.all((ratios > 3.4) & (ratios < 4.6))


def test_residual_of_zero_field():
    spec = problem_from_manufactured("cosh", n_cells=32)
    res = residual(ScalarField(spec.grid, np.zeros(spec.grid.shape)), spec).values
    eq = spec.equation_mask
    np.testing.assert_array_equal(res[eq], -spec.f.values[eq])
    np.testing.assert_array_equal(res[~eq], -spec.boundary[~eq])


# --- Jacobian ---------------------------------------------------------------


@pytest.mark.parametrize("node", [(16, 16), (5, 9), (2, 2), (30, 3)])
def test_jacobian_directional_derivative(node):
    spec = problem_from_manufactured("aniso-quadratic", n_cells=32)
    u = spec.exact.on(spec.grid, "u")
    v = np.zeros(spec.grid.shape)
    v[node] = 1.0
    jv = (jacobian_assemble(u, spec) @ v.ravel()).reshape(v.shape)
    eps = 1e-6
    fd = (residual(u + eps * v, spec).values - residual(u - eps * v, spec).values) / (2 * eps)
    assert np.max(np.abs(fd - jv)) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_jacobian_matches_smooth_direction(seed):
    spec = problem_from_manufactured("cosh", n_cells=16)
    u = spec.exact.on(spec.grid, "u")
    v = smooth_perturbation(spec.grid, seed)
    jv = (jacobian_assemble(u, spec) @ v.ravel()).reshape(v.shape)
    errs = []
    for eps in (1e-3, 5e-4):
        fd = (residual(u + eps * v, spec).values - residual(u, spec).values) / eps
        errs.append(np.max(np.abs(fd - jv)))
    # forward differences: error is O(eps)
    assert errs[1] < 0.6 * errs[0] + 1e-9


def test_jacobian_boundary_rows_are_identity():
    spec = problem_from_manufactured("cosh", n_cells=16)
    jac = jacobian_assemble(spec.exact.on(spec.grid, "u"), spec).tocsr()
    n1 = spec.grid.n_cells + 1
    for i, j in [(0, 0), (1, 7), (16, 15), (8, 0)]:
        row = jac.getrow(i * n1 + j)
        assert row.nnz == 1 and row[0, i * n1 + j] == 1.0


def test_jacobian_cofactor_coefficients():
    """At Hessian diag(2, 1) the u11 stencil carries F11 = 1 and u22 carries F22 = 2."""
    spec = problem_from_manufactured("aniso-quadratic", n_cells=16)
    u = spec.exact.on(spec.grid, "u")
    jac = jacobian_assemble(u, spec).tocsr()
    n1 = 17
    i = j = 8
    h2 = spec.grid.h ** 2
    row = jac.getrow(i * n1 + j).toarray().ravel()
    east, west = row[(i + 1) * n1 + j], row[(i - 1) * n1 + j]
    north, south = row[i * n1 + j + 1], row[i * n1 + j - 1]
    # at the origin the gradient is zero, so only the second-difference part remains
    assert east * h2 == pytest.approx(1.0) and west * h2 == pytest.approx(1.0)
    assert north * h2 == pytest.approx(2.0) and south * h2 == pytest.approx(2.0)


def test_singular_solve_reports_node():
    a = sps.identity(9, format="csr").tolil()
    a[4, 4] = 0.0
    with pytest.raises(_Singular):
        _solve(a.tocsr(), np.ones(9), 3)


# --- initial guesses ----------------------------------------------------------


def test_smooth_perturbation_vanishes_on_rings():
    g = Grid2D(1.0, 32)
    p = smooth_perturbation(g, 4)
    assert np.max(np.abs(p)) == pytest.approx(1.0)
    assert np.all(p[g.ring() < 2] == 0.0)


@pytest.mark.parametrize("name", ["cosh", "aniso-quadratic", "radial-quadratic"])
def test_quadratic_fit_is_convex_and_matches_rings(name):
    spec = problem_from_manufactured(name, n_cells=64)
    u0 = quadratic_fit(spec)
    np.testing.assert_allclose(u0[spec.boundary_mask], spec.boundary[spec.boundary_mask],
                               atol=1e-12)
    assert convexity_margin(ScalarField(spec.grid, u0)) > 0


def test_initial_guess_requires_truth():
    spec = problem_from_manufactured("cosh", n_cells=16)
    blind = ProblemSpec(R=1.0, grid=spec.grid, f=spec.f, boundary=spec.boundary,
                        m=spec.m, M=spec.M)
    with pytest.raises(InputError):
        initial_guess(blind, SolverConfig())
    assert initial_guess(blind, SolverConfig(initial_guess="quadratic-fit")).shape == spec.grid.shape


# --- Newton -------------------------------------------------------------------


def test_newton_aniso_recovers_exact():
    spec, st = solved("aniso-quadratic", 64)
    assert st.converged and st.residual_norm < 1e-10
    assert sup_error(st, spec) < 1e-11


def test_newton_exact_start_two_iterations():
    spec = problem_from_manufactured("cosh", n_cells=64)
    st = newton_solve(spec, SolverConfig(initial_guess="exact"))
    assert st.converged and st.iterations <= 2


@pytest.mark.parametrize("name", ["cosh", "aniso-quadratic"])
def test_newton_blind_start(name):
    spec = problem_from_manufactured(name, n_cells=32)
    st = newton_solve(spec, SolverConfig(initial_guess="quadratic-fit"))
    assert st.converged


def test_newton_max_iterations():
    spec = problem_from_manufactured("cosh", n_cells=32)
    st = newton_solve(spec, SolverConfig(max_iterations=1))
    assert not st.converged and st.reason == "max iterations exceeded"
    assert st.iterations == 1


def test_newton_rejects_nonconvex_start():
    spec = problem_from_manufactured("cosh", n_cells=32)
    st = newton_solve(spec, u0=ScalarField(spec.grid, -spec.exact.on(spec.grid, "u")))
    assert not st.converged and "not convex" in st.reason


def test_newton_log_is_monotone():
    _, st = solved("cosh", 64)
    res = [r["residual"] for r in st.log]
    assert all(b < a for a, b in zip(res, res[1:]))
    assert all(r["convexity_margin"] > -1e-10 for r in st.log)


def test_sup_error_ratio_cosh():
    e = [sup_error(st, spec) for spec, st in (solved("cosh", 64), solved("cosh", 128))]
    assert 3.4 <= e[0] / e[1] <= 4.6


@pytest.mark.parametrize("name, n", [("cosh", 32), ("cosh", 64), ("aniso-quadratic", 64),
                                     ("radial-quadratic", 32)])
def test_converged_state_invariants(name, n):
    spec, st = solved(name, n)
    # residual certificate
    assert np.max(np.abs(residual(st.u, spec).values)) <= st.tolerance
    # convexity against the exact solution
    assert st.convexity_margin > -1e-10
    assert st.convexity_margin >= 0.5 * spec.exact.min_hessian_eigenvalue(spec.grid)
    # equation in product form on equation nodes
    hs = hessian_fd(st.u)
    lam1, lam2, _ = hs.eigen()
    p = 1 + hs.grad[0] ** 2 + hs.grad[1] ** 2
    eq = spec.equation_mask
    assert np.max(np.abs(lam1 * lam2 - spec.f.values * p * p)[eq]) <= 10 * st.tolerance
    assert np.all(lam2[hs.grid.interior(1)] <= lam1[hs.grid.interior(1)])


# --- studies ------------------------------------------------------------------


def test_convergence_study_aniso_exact():
    rows = convergence_study("aniso-quadratic", [32, 64])
    assert all(r["sup_error"] < 1e-11 for r in rows)
    assert rows[0]["order"] is None


def test_convergence_study_needs_two_levels():
    with pytest.raises(InputError):
        convergence_study("cosh", [32])


def test_convergence_study_reports_failing_level():
    with pytest.raises(StudyError) as info:
        convergence_study("cosh", [32, 64], config=SolverConfig(max_iterations=1))
    assert info.value.level == 32
