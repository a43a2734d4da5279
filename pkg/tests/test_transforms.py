import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import gram_min_kernel
from volterra_mfg.delay_models import sde_closed_forms, sde_model
from volterra_mfg.errors import InvalidArgumentError
from volterra_mfg.grid_kernels import make_uniform_grid, sample_kernel
from volterra_mfg.transforms import ModelSpec, adjoint_operator, build_transforms, gram_M_check, gram_matrix


def exact_c_hat(grid, b, c):
    t, s = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
    return np.where(t >= s, c * np.exp(b * (t - s)), 0.0)


@pytest.mark.parametrize("b", [-1.0, 0.5, 2.0])
def test_c_hat_matches_exponential_closed_form(b):
    errs = []
    for n in (64, 128):
        bundle = build_transforms(ModelSpec(b=b, c=1.5, n_steps=n))
        errs.append(np.max(np.abs(bundle.c_hat.values - exact_c_hat(bundle.grid, b, 1.5))))
    assert errs[1] <= 5e-3
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_zero_drift_leaves_kernels_untouched():
    m = ModelSpec(b=0.0, c=lambda t, s: np.cos(t + 2 * s), sigma=0.7, phi=np.exp, f=0.4, n_steps=32)
    bundle = build_transforms(m)
    np.testing.assert_array_equal(bundle.c_hat.values, bundle.c.values)
    np.testing.assert_array_equal(bundle.sigma_hat.values, bundle.sigma.values)
    np.testing.assert_array_equal(bundle.f_hat.values, bundle.f.values)
    np.testing.assert_array_equal(bundle.phi_hat, bundle.phi)


def test_phi_hat_for_constant_drift():
    errs = []
    for n in (32, 64):
        bundle = build_transforms(ModelSpec(b=0.8, phi=2.0, n_steps=n))
        errs.append(np.max(np.abs(bundle.phi_hat - 2.0 * np.exp(0.8 * bundle.grid.nodes))))
    assert errs[1] < 1e-4 and errs[0] / errs[1] > 3.5


def test_gram_kernel_unit_control_is_min():
    bundle = build_transforms(ModelSpec(b=0.0, c=1.0, n_steps=64))
    np.testing.assert_allclose(bundle.M.values, gram_min_kernel(bundle.grid), atol=1e-14)
    assert gram_M_check(bundle) == 0.0


def test_gram_kernel_off_diagonal_is_trapezoid():
    m = ModelSpec(b=0.4, c=lambda t, s: 1.0 + t * s, n_steps=24)
    bundle = build_transforms(m)
    g, ch = bundle.grid, bundle.c_hat.values
    M = bundle.M.values
    for i in range(g.size):
        for l in range(g.size):
            k = min(i, l)
            ref = g.causal_weights[k] @ (ch[i] * ch[l])
            if i == l and 0 < i < g.n_steps:
                ref -= 0.25 * g.h * ch[i, i] ** 2
            assert M[i, l] == pytest.approx(ref, abs=1e-13)


def test_gram_kernel_against_quadrature_closed_form():
    b, c = -0.6, 1.3
    fine = []
    for n in (32, 64):
        g = make_uniform_grid(1.0, n)
        M = build_transforms(ModelSpec(b=b, c=c, n_steps=n)).M.values
        ref = sde_closed_forms(b, c, 0.0, g).M.values
        off = ~np.eye(g.size, dtype=bool)
        fine.append(np.max(np.abs(M - ref)[off]))
    assert fine[1] < 1e-3 and fine[0] / fine[1] > 3.5


@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(3, 25))
def test_gram_matrix_is_symmetric_positive_semidefinite(seed, n):
    g = make_uniform_grid(1.0, n)
    rng = np.random.default_rng(seed)
    C = np.tril(rng.standard_normal((n + 1, n + 1))) * g.causal_weights
    M = gram_matrix(C, g.weights)
    np.testing.assert_array_equal(M, M.T)
    ev = np.linalg.eigvalsh(M * g.weights[None, :] ** 0.5 * g.weights[:, None] ** 0.5)
    assert ev.min() > -1e-10 * max(1.0, ev.max())


@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(3, 25))
def test_adjoint_identity(seed, n):
    """``<C u, y>_w = <u, G y>_w`` for the trapezoid inner product."""
    g = make_uniform_grid(1.0, n)
    rng = np.random.default_rng(seed)
    C = np.tril(rng.standard_normal((n + 1, n + 1)))
    G = adjoint_operator(C, g.weights)
    u, y = rng.standard_normal(n + 1), rng.standard_normal(n + 1)
    w = g.weights
    assert (C @ u) @ (w * y) == pytest.approx(u @ (w * (G @ y)), rel=1e-10, abs=1e-12)


def test_qm_equals_c_times_g():
    bundle = build_transforms(ModelSpec(b=0.3, c=lambda t, s: 1 + s, n_steps=20))
    np.testing.assert_allclose(bundle.QM, bundle.C @ bundle.G, atol=1e-14)


def test_tilde_inverts_coupling_operator():
    bundle = build_transforms(ModelSpec(b=0.3, f=lambda t, s: np.sin(t - s) + 0.5, phi=1.0, n_steps=30))
    n1 = bundle.grid.size
    np.testing.assert_allclose(bundle.tilde @ (np.eye(n1) - bundle.Qf), np.eye(n1), atol=1e-13)
    np.testing.assert_allclose(bundle.phi_tilde, bundle.phi_hat + bundle.Qf @ bundle.phi_tilde, atol=1e-13)


def test_sigma_left_is_strictly_causal():
    bundle = build_transforms(ModelSpec(sigma=1.0, n_steps=8))
    sl = bundle.sigma_left
    assert sl.shape == (9, 8)
    np.testing.assert_array_equal(sl, np.tri(9, 8, -1))


def test_sde_model_uses_integration_variable():
    m = sde_model(lambda t: 1 + t, 2.0, 0.5, 3.0, 1.0, 8)
    g = m.grid
    bundle = build_transforms(m)
    np.testing.assert_allclose(bundle.b.values, np.tril(np.tile(1 + g.nodes, (g.size, 1))))
    assert bundle.phi[0] == 3.0


def test_bundle_arrays_are_read_only():
    bundle = build_transforms(ModelSpec(c=1.0, n_steps=4))
    for arr in (bundle.C, bundle.G, bundle.phi_hat, bundle.c_hat.values):
        with pytest.raises(ValueError):
            arr[0, ...] = 1.0


@pytest.mark.parametrize("kw", [{"R": 0.0}, {"R": -1.0}, {"tol": 0.0}, {"k_max": 0}, {"n_steps": 1},
                                {"T": -1.0}, {"gamma": float("nan")}])
def test_model_validation(kw):
    with pytest.raises(InvalidArgumentError):
        ModelSpec(**kw)


def test_build_transforms_is_cached_by_identity():
    m = ModelSpec(c=1.0, n_steps=8)
    assert build_transforms(m) is build_transforms(m)
    assert build_transforms(m.replace(R=2.0)) is not build_transforms(m)


def test_sampled_kernel_accepted_as_model_data():
    g = make_uniform_grid(1.0, 10)
    K = sample_kernel(lambda t, s: t * s, g)
    a = build_transforms(ModelSpec(c=K.values, n_steps=10)).c.values
    np.testing.assert_array_equal(a, K.values)
