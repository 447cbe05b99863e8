import functools

import numpy as np
import pytest

from gclab.fieldcalc import Grid2D, ScalarField
from gclab.solver import SolverConfig, newton_solve, problem_from_manufactured


@functools.lru_cache(maxsize=None)
def solved(name, n_cells, R=1.0, initial_guess="exact-perturbed"):
    """(spec, state) for a manufactured problem; cached across the session."""
    spec = problem_from_manufactured(name, R=R, n_cells=n_cells)
    state = newton_solve(spec, SolverConfig(initial_guess=initial_guess))
    assert state.converged, state.reason
    return spec, state


def exact_field(spec):
    return ScalarField(spec.grid, spec.exact.on(spec.grid, "u"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid32():
    return Grid2D(1.0, 32)
