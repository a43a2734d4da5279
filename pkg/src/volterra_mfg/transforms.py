"""Model data and every derived (hatted / tilde) quantity built from it."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache

import numpy as np

from .errors import InvalidArgumentError
from .grid_kernels import (
    FunctionLike,
    KernelLike,
    KernelMatrix,
    ResolventResult,
    TimeGrid,
    causal_integral,
    kernel_compose,
    make_uniform_grid,
    sample_function,
    sample_kernel,
    volterra_operator,
    volterra_operator_inverse,
    volterra_resolvent,
)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Data of the N-player game with Volterra state dynamics.

    State of player i::

        x_i(t) = phi(t) + int_0^t b(t,s) x_i(s) ds + int_0^t f(t,s) x^N(s) ds
                 + int_0^t c(t,s) u_i(s) ds + int_0^t sigma(t,s) dW_i(s)

    cost ``E int_0^T (x_i - gamma x^N - eta)^2 + R u_i^2 dt``.

    Kernels may be callables ``k(t, s)``, constants, ``None`` (zero) or arrays
    already sampled on the model grid. ``tol`` is the linear-solver tolerance,
    ``resolvent_tol``/``k_max`` control the Neumann series.
    """

    T: float = 1.0
    phi: FunctionLike = 0.0
    b: KernelLike = 0.0
    f: KernelLike = 0.0
    c: KernelLike = 0.0
    sigma: KernelLike = 0.0
    R: float = 1.0
    gamma: float = 0.0
    eta: float = 0.0
    n_steps: int = 64
    k_max: int = 200
    tol: float = 1e-10
    resolvent_tol: float = 1e-14
    name: str = ""

    def __post_init__(self):
        for attr in ("R", "gamma", "eta", "tol", "resolvent_tol"):
            v = getattr(self, attr)
            if not isinstance(v, (int, float, np.integer, np.floating)) or not math.isfinite(v):
                raise InvalidArgumentError(f"{attr} must be a finite real, got {v!r}")
        if self.R <= 0:
            raise InvalidArgumentError(f"control weight R must be > 0, got {self.R!r}")
        if self.tol <= 0 or self.resolvent_tol <= 0:
            raise InvalidArgumentError("tolerances must be positive")
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise InvalidArgumentError(f"k_max must be a positive integer, got {self.k_max!r}")
        # validates T and n_steps
        make_uniform_grid(self.T, self.n_steps)

    @cached_property
    def grid(self) -> TimeGrid:
        return make_uniform_grid(self.T, self.n_steps)

    def replace(self, **changes) -> "ModelSpec":
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class TransformBundle:
    """Sampled model kernels plus all derived quantities.

    Orientation: every lower-triangular kernel is stored with its later time
    first. In particular ``c_hat.values[i, j]`` is the effect at ``t_i`` of a
    control applied at ``t_j <= t_i``.

    The discrete closed-loop operators are also kept:

    ``Qf``       quadrature matrix of ``a -> int_0^t f_hat(t,s) a(s) ds``
    ``C``        quadrature matrix of ``u -> int_0^t c_hat(t,s) u(s) ds``
    ``G``        adjoint of ``C`` in the trapezoid inner product, so that
                 ``(G y)(t)`` approximates ``int_t^T c_hat(s,t) y(s) ds``
    ``tilde``    ``(I - Qf)^{-1}``, the discrete counterpart of ``I + P_tilde``
    """

    grid: TimeGrid
    b: KernelMatrix
    f: KernelMatrix
    c: KernelMatrix
    sigma: KernelMatrix
    phi: np.ndarray
    resolvent_b: ResolventResult
    c_hat: KernelMatrix
    phi_hat: np.ndarray
    f_hat: KernelMatrix
    sigma_hat: KernelMatrix
    M: KernelMatrix
    resolvent_f: ResolventResult
    phi_tilde: np.ndarray
    M_tilde: KernelMatrix
    Qf: np.ndarray
    C: np.ndarray
    G: np.ndarray
    tilde: np.ndarray

    @property
    def P(self) -> KernelMatrix:
        return self.resolvent_b.kernel

    @property
    def P_tilde(self) -> KernelMatrix:
        return self.resolvent_f.kernel

    @cached_property
    def QM(self) -> np.ndarray:
        """Quadrature matrix of ``y -> int_0^T M(t,s) y(s) ds``; equals ``C @ G``."""
        return self.M.values * self.grid.weights[None, :]

    @cached_property
    def sigma_left(self) -> np.ndarray:
        """Left-point Ito coefficients, ``[i, j] = sigma_hat(t_i, t_j)`` for ``j < i``."""
        n = self.grid.n_steps
        return np.tril(self.sigma_hat.values, -1)[:, :n]


def gram_matrix(C: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``C W^{-1} C^T``, symmetrized.

    With ``C = c_hat * Omega`` the off-diagonal entries equal the trapezoid
    rule for ``int_0^{s^t} c_hat(t,r) c_hat(s,r) dr``; the interior diagonal
    differs from it by ``-(h/4) c_hat(t,t)^2``. This is the kernel produced
    by the exact discrete optimality condition.
    """
    G = C / weights[None, :]
    M = G @ C.T
    return 0.5 * (M + M.T)


def adjoint_operator(C: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``W^{-1} C^T W``: adjoint of ``C`` under the trapezoid inner product."""
    return (C.T * weights[None, :]) / weights[:, None]


@lru_cache(maxsize=64)
def build_transforms(model: ModelSpec) -> TransformBundle:
    grid = model.grid
    b = sample_kernel(model.b, grid, "lower")
    f = sample_kernel(model.f, grid, "lower")
    c = sample_kernel(model.c, grid, "lower")
    sigma = sample_kernel(model.sigma, grid, "lower")
    phi = sample_function(model.phi, grid)

    res_b = volterra_resolvent(b, model.k_max, model.resolvent_tol)
    P = res_b.kernel
    c_hat = c + kernel_compose(P, c, "volterra")
    f_hat = f + kernel_compose(P, f, "volterra")
    sigma_hat = sigma + kernel_compose(P, sigma, "volterra")
    phi_hat = phi + causal_integral(P, phi)

    C = volterra_operator(c_hat)
    M = KernelMatrix(grid, gram_matrix(C, grid.weights), "full")
    G = adjoint_operator(C, grid.weights)

    res_f = volterra_resolvent(f_hat, model.k_max, model.resolvent_tol)
    Qf = volterra_operator(f_hat)
    tilde = volterra_operator_inverse(Qf)
    phi_tilde = tilde @ phi_hat
    M_tilde = KernelMatrix(grid, tilde @ M.values, "full")

    for arr in (phi, phi_hat, phi_tilde, Qf, C, G, tilde):
        arr.setflags(write=False)
    return TransformBundle(
        grid=grid, b=b, f=f, c=c, sigma=sigma, phi=phi,
        resolvent_b=res_b, c_hat=c_hat, phi_hat=phi_hat, f_hat=f_hat,
        sigma_hat=sigma_hat, M=M, resolvent_f=res_f, phi_tilde=phi_tilde,
        M_tilde=M_tilde, Qf=Qf, C=C, G=G, tilde=tilde,
    )


def gram_M_check(bundle: TransformBundle) -> float:
    """Largest asymmetry ``|M(t,s) - M(s,t)|`` on the grid."""
    M = bundle.M.values
    return float(np.max(np.abs(M - M.T)))


def target(model: ModelSpec, a: np.ndarray) -> np.ndarray:
    """Tracking target ``gamma a + eta`` of the limit cost."""
    return model.gamma * np.asarray(a, dtype=float) + model.eta
