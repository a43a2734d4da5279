import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import gram_min_kernel
from volterra_mfg.errors import InvalidArgumentError, NonConvergenceError, SingularSystemError
from volterra_mfg.fredholm import (
    FredholmProblem,
    contraction_margin,
    fredholm_solve,
    gamma_apply,
    gamma_apply_model,
)
from volterra_mfg.grid_kernels import KernelMatrix, make_uniform_grid, sample_kernel, zero_kernel
from volterra_mfg.transforms import build_transforms


def const_problem(R, n=32, value=1.0):
    g = make_uniform_grid(1.0, n)
    return FredholmProblem(sample_kernel(value, g, "full"), np.ones(g.size), R)


def test_constant_kernel_solution():
    rep = fredholm_solve(const_problem(2.0), tol=1e-10)
    np.testing.assert_allclose(rep.solution, 2.0, atol=1e-10)
    assert rep.mode == "direct"
    assert rep.contraction_margin == pytest.approx(0.5)
    assert rep.within_contraction


def test_picard_agrees_inside_contraction():
    tol = 1e-10
    direct = fredholm_solve(const_problem(2.0), tol=tol).solution
    rep = fredholm_solve(const_problem(2.0), mode="picard", tol=tol)
    assert rep.iterations > 0
    assert np.max(np.abs(rep.solution - direct)) <= 10 * tol


@pytest.mark.parametrize("n", [4, 16, 64, 256])
def test_unit_spectral_radius_is_singular(n):
    with pytest.raises(SingularSystemError):
        fredholm_solve(const_problem(1.0, n))
    with pytest.raises(NonConvergenceError):
        fredholm_solve(const_problem(1.0, n), mode="picard", max_iter=200)


def test_zero_kernel_returns_forcing_without_iterations():
    g = make_uniform_grid(1.0, 8)
    psi = np.linspace(0, 1, 9)
    rep = fredholm_solve(FredholmProblem(zero_kernel(g, "full"), psi, 3.0), mode="picard")
    np.testing.assert_array_equal(rep.solution, psi)
    assert rep.iterations == 0


@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(3, 40), R=st.floats(1.5, 10.0))
def test_direct_solution_satisfies_equation(seed, n, R):
    g = make_uniform_grid(1.0, n)
    rng = np.random.default_rng(seed)
    A = KernelMatrix(g, rng.uniform(-1, 1, (n + 1, n + 1)), "full")
    p = FredholmProblem(A, rng.standard_normal(n + 1), R)
    rep = fredholm_solve(p, tol=1e-10)
    assert p.residual(rep.solution) <= 1e-10 * max(1.0, np.abs(rep.solution).max())
    if rep.within_contraction:
        pic = fredholm_solve(p, mode="picard", tol=1e-10)
        assert np.max(np.abs(pic.solution - rep.solution)) <= 1e-9


def test_contraction_margin_definition():
    g = make_uniform_grid(2.0, 10)
    A = sample_kernel(3.0, g, "full")
    assert contraction_margin(A, 6.0) == pytest.approx(9.0 * 2.0 / 6.0)


def test_invalid_arguments():
    g = make_uniform_grid(1.0, 4)
    with pytest.raises(InvalidArgumentError):
        FredholmProblem(zero_kernel(g, "full"), np.ones(5), 0.0)
    with pytest.raises(InvalidArgumentError):
        FredholmProblem(zero_kernel(g, "full"), np.ones(4), 1.0)
    with pytest.raises(InvalidArgumentError):
        fredholm_solve(const_problem(2.0), mode="newton")


def test_best_response_to_zero_mean_matches_dense_solve(lq_model):
    # x = 1 - (1/10) int (s^t) x, with the closed-loop Gram kernel
    bundle = build_transforms(lq_model)
    g = bundle.grid
    x = gamma_apply(bundle, np.zeros(g.size), 0.0, 0.0, 10.0)
    L = np.eye(g.size) + gram_min_kernel(g) * g.weights[None, :] / 10.0
    ref = np.linalg.solve(L, np.ones(g.size))
    assert abs(x[-1] - ref[-1]) <= 1e-10
    np.testing.assert_allclose(x, ref, atol=1e-10)


def test_best_response_modes_agree(coupled_model):
    a = np.linspace(1.0, 2.0, coupled_model.grid.size)
    d = gamma_apply_model(coupled_model, a)
    p = gamma_apply_model(coupled_model, a, mode="picard")
    assert np.max(np.abs(d - p)) <= 10 * coupled_model.tol
