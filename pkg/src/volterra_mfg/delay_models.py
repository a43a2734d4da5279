"""Reductions of delayed linear SDEs to Volterra form, and closed forms for plain SDEs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from .errors import InvalidArgumentError
from .grid_kernels import KernelMatrix, TimeGrid, sample_function, sample_kernel
from .transforms import ModelSpec

Fn = Callable[[np.ndarray], np.ndarray]


def _as_fn(g) -> Callable:
    if callable(g):
        return g
    if g is None:
        return lambda t: np.zeros_like(np.asarray(t, dtype=float))
    v = float(g)
    return lambda t: np.full_like(np.asarray(t, dtype=float), v)


def _as_kernel_fn(g) -> Callable:
    if callable(g):
        return g
    v = 0.0 if g is None else float(g)
    return lambda t, s: np.full(np.broadcast(np.asarray(t, float), np.asarray(s, float)).shape, v)


def _eval(g: Callable, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    try:
        return np.broadcast_to(np.asarray(g(x), dtype=float), x.shape).astype(float)
    except (TypeError, ValueError):
        return np.array([float(g(float(v))) for v in x.ravel()]).reshape(x.shape)


@dataclass(frozen=True, eq=False)
class DelayStateModel:
    """``dx = [A(t) x(t-h) + int_{t-h}^t B(t,s) x(s) ds + C(t) u(t)] dt + D(t) dW``, ``x = k`` on ``[-h, 0]``."""

    A: object = 0.0
    B: object = 0.0
    C: object = 0.0
    D: object = 0.0
    h: float = 1.0
    k: object = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise InvalidArgumentError(f"delay h must be positive, got {self.h!r}")
        for name in ("A", "C", "D", "k"):
            object.__setattr__(self, name, _as_fn(getattr(self, name)))
        object.__setattr__(self, "B", _as_kernel_fn(self.B))


@dataclass(frozen=True, eq=False)
class DelayControlModel:
    """``dx = [A(t) x(t) + C(t) u(t-h)] dt + D(t) dW``, ``x = k`` on ``[-h, 0]``; ``C = 0`` on ``[0, h)``."""

    A: object = 0.0
    C: object = 0.0
    D: object = 0.0
    h: float = 1.0
    k: object = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.h) and self.h > 0):
            raise InvalidArgumentError(f"delay h must be positive, got {self.h!r}")
        for name in ("A", "D", "k"):
            object.__setattr__(self, name, _as_fn(getattr(self, name)))
        raw_C, h = _as_fn(self.C), self.h
        object.__setattr__(self, "C", lambda t: np.where(np.asarray(t) < h, 0.0, _eval(raw_C, t)))


@dataclass(frozen=True, eq=False)
class FundamentalSolution:
    Phi: KernelMatrix


def _delay_steps(h: float, grid: TimeGrid) -> int:
    ratio = h / grid.h
    d = int(round(ratio))
    if d < 1 or abs(ratio - d) > 1e-9 * max(1.0, ratio):
        raise InvalidArgumentError(f"delay {h!r} is not a positive multiple of the grid step {grid.h!r}")
    return d


def phi2_solve(A, grid: TimeGrid) -> FundamentalSolution:
    """``Phi_2(t, s) = exp(int_s^t A)`` on the full square; exponent by the trapezoid rule."""
    a = sample_function(_as_fn(A), grid)
    I = np.concatenate([[0.0], np.cumsum(0.5 * grid.h * (a[1:] + a[:-1]))])
    return FundamentalSolution(KernelMatrix(grid, np.exp(I[:, None] - I[None, :]), "full"))


def phi1_solve(model: DelayStateModel, grid: TimeGrid) -> FundamentalSolution:
    """Fundamental solution of the state-delay equation by a trapezoid method of steps.

    Column ``j`` is the solution started at ``t_j`` with unit value and zero
    history. Its jump at ``t_j`` is handled with one-sided values: the
    delayed term and the distributed-delay integrand use the left limit
    (zero) at the jump and the right limit (one) after it.
    """
    d = _delay_steps(model.h, grid)
    n1, tau = grid.size, grid.h
    t = grid.nodes
    A = _eval(model.A, t)
    T_, S_ = np.meshgrid(t, t, indexing="ij")
    B = np.asarray(_eval_kernel(model.B, T_, S_))
    Phi = np.zeros((n1, n1))
    Phi[0, 0] = 1.0

    def right(m):
        return Phi[m] if m >= 0 else np.zeros(n1)

    def left(m):
        if m < 0:
            return np.zeros(n1)
        r = Phi[m].copy()
        r[m] = 0.0
        return r

    def integral(k, include_last=True):
        acc = np.zeros(n1)
        for m in range(max(1, k - d + 1), k + 1):
            acc += 0.5 * tau * B[k, m - 1] * right(m - 1)
            if include_last or m < k:
                acc += 0.5 * tau * B[k, m] * left(m)
        return acc

    for k in range(n1 - 1):
        f_now = A[k] * right(k - d) + integral(k)
        known = A[k + 1] * left(k + 1 - d) + integral(k + 1, include_last=False)
        denom = 1.0 - 0.25 * tau * tau * B[k + 1, k + 1]
        row = (Phi[k] + 0.5 * tau * (f_now + known)) / denom
        row[k + 1:] = 0.0
        Phi[k + 1] = row
        Phi[k + 1, k + 1] = 1.0
    return FundamentalSolution(KernelMatrix(grid, Phi, "lower"))


def _eval_kernel(B: Callable, t, s) -> np.ndarray:
    t, s = np.asarray(t, float), np.asarray(s, float)
    try:
        return np.broadcast_to(np.asarray(B(t, s), dtype=float), np.broadcast(t, s).shape).astype(float)
    except (TypeError, ValueError):
        return np.vectorize(lambda a, b: float(B(a, b)))(t, s)


def _trap(n_pts: int, step: float) -> np.ndarray:
    if n_pts <= 1:
        return np.zeros(max(n_pts, 0))
    w = np.full(n_pts, step)
    w[0] = w[-1] = 0.5 * step
    return w


def state_delay_forcing(model: DelayStateModel, grid: TimeGrid, Phi: np.ndarray | None = None) -> np.ndarray:
    """Contribution of the initial segment, ``psi(t)``.

    ``psi(t) = Phi(t,0) k(0) + int_{-h}^0 Phi(t,s+h) A(s+h) k(s) ds
               + int_0^{min(h,t)} Phi(t,u) int_{u-h}^0 B(u,s) k(s) ds du``

    The inner range ``s >= u - h`` keeps ``B`` on its delay band.
    """
    d = _delay_steps(model.h, grid)
    if Phi is None:
        Phi = phi1_solve(model, grid).Phi.values
    n1, tau = grid.size, grid.h
    t = grid.nodes
    s_nodes = np.arange(d + 1) * tau - model.h
    s_nodes[-1] = 0.0
    kk = _eval(model.k, s_nodes)
    u_nodes = np.arange(d + 1) * tau
    Au = _eval(model.A, u_nodes)
    Bus = _eval_kernel(model.B, u_nodes[:, None], s_nodes[None, :])
    inner = np.array([_trap(d + 1 - p, tau) @ (Bus[p, p:] * kk[p:]) for p in range(d + 1)])
    psi = np.empty(n1)
    for i in range(n1):
        top = min(d, i)
        wts = _trap(top + 1, tau)
        ph = Phi[i, : top + 1]
        psi[i] = Phi[i, 0] * kk[-1] + wts @ (ph * Au[: top + 1] * kk[: top + 1]) + wts @ (ph * inner[: top + 1])
    return psi


def delay_state_to_volterra(model: DelayStateModel, grid: TimeGrid, **game) -> ModelSpec:
    """Equivalent Volterra model: ``c = Phi_1(t,s) C(s)``, ``sigma = Phi_1(t,s) D(s)``, ``phi = psi``.

    ``game`` supplies the cost data and solver settings (``R``, ``gamma``,
    ``eta``, ``tol``, ...).
    """
    Phi = phi1_solve(model, grid).Phi.values
    t = grid.nodes
    c = Phi * _eval(model.C, t)[None, :]
    sig = Phi * _eval(model.D, t)[None, :]
    psi = state_delay_forcing(model, grid, Phi)
    return ModelSpec(T=grid.T, n_steps=grid.n_steps, phi=psi, b=0.0, f=0.0, c=c, sigma=sig, **game)


def delay_control_kernel(model: DelayControlModel, grid: TimeGrid) -> KernelMatrix:
    """``c(t,s) = Phi_2(t, s+h) C(s+h)`` for ``s + h <= t`` and zero otherwise.

    A control applied at ``s`` acts on the state from ``s + h`` on, so the
    kernel vanishes for ``t < s + h``, and everywhere when ``h >= T`` (the
    lone node ``(T, 0)`` at ``h = T`` has no duration to act on).
    """
    d = _delay_steps(model.h, grid)
    n1 = grid.size
    out = np.zeros((n1, n1))
    if d < grid.n_steps:
        Phi2 = phi2_solve(model.A, grid).Phi.values
        Cv = _eval(model.C, grid.nodes)
        for j in range(n1 - d):
            out[j + d:, j] = Phi2[j + d:, j + d] * Cv[j + d]
    return KernelMatrix(grid, out, "lower")


def delay_control_to_volterra(model: DelayControlModel, grid: TimeGrid, **game) -> ModelSpec:
    Phi2 = phi2_solve(model.A, grid).Phi.values
    c = delay_control_kernel(model, grid).values
    sig = np.tril(Phi2) * _eval(model.D, grid.nodes)[None, :]
    phi = Phi2[:, 0] * float(_eval(model.k, np.array([0.0]))[0])
    return ModelSpec(T=grid.T, n_steps=grid.n_steps, phi=phi, b=0.0, f=0.0, c=c, sigma=sig, **game)


@dataclass(frozen=True, eq=False)
class SDEClosedForms:
    """Closed-form kernels for coefficients depending on the integration variable only."""

    P: KernelMatrix
    c_hat: KernelMatrix
    sigma_hat: KernelMatrix
    phi_hat_factor: np.ndarray
    M: KernelMatrix


def sde_closed_forms(b, c, sigma, grid: TimeGrid) -> SDEClosedForms:
    """``P(s,t) = b(t) e^{int_t^s b}``, ``c_hat(s,t) = c(t) e^{int_t^s b}``,
    ``phi_hat = x0 e^{int_0^t b}`` and
    ``M(t,s) = e^{I(t)+I(s)} int_0^{s^t} c(r)^2 e^{-2 I(r)} dr`` with ``I = int_0 b``.

    Integrals are evaluated by adaptive quadrature, independently of the grid.
    """
    bf, cf, sf = _as_fn(b), _as_fn(c), _as_fn(sigma)
    scal = lambda g: (lambda r: float(_eval(g, np.array([r]))[0]))  # noqa: E731
    b1, c1 = scal(bf), scal(cf)
    t = grid.nodes

    def I_of(x):
        return integrate.quad(b1, 0.0, x, epsabs=1e-14, epsrel=1e-13, limit=200)[0] if x > 0 else 0.0

    I = np.array([I_of(x) for x in t])
    J = np.zeros_like(t)
    for i in range(1, t.size):
        J[i] = J[i - 1] + integrate.quad(lambda r: c1(r) ** 2 * np.exp(-2.0 * I_of(r)), t[i - 1], t[i],
                                         epsabs=1e-14, epsrel=1e-13, limit=200)[0]
    E = np.exp(I[:, None] - I[None, :])
    low = np.tri(t.size, dtype=bool)
    bv, cv, sv = _eval(bf, t), _eval(cf, t), _eval(sf, t)
    P = np.where(low, bv[None, :] * E, 0.0)
    ch = np.where(low, cv[None, :] * E, 0.0)
    sh = np.where(low, sv[None, :] * E, 0.0)
    mn = np.minimum.outer(np.arange(t.size), np.arange(t.size))
    M = np.exp(I[:, None] + I[None, :]) * J[mn]
    return SDEClosedForms(
        P=KernelMatrix(grid, P, "lower"), c_hat=KernelMatrix(grid, ch, "lower"),
        sigma_hat=KernelMatrix(grid, sh, "lower"), phi_hat_factor=np.exp(I), M=KernelMatrix(grid, M, "full"),
    )


def sde_model(b, c, sigma, x0: float, grid_or_T, n_steps: int | None = None, **game) -> ModelSpec:
    """Volterra model of ``dx = (b x + c u) dt + sigma dW``, ``x(0) = x0``."""
    if isinstance(grid_or_T, TimeGrid):
        T, n_steps = grid_or_T.T, grid_or_T.n_steps
    else:
        T = float(grid_or_T)
    bf, cf, sf = _as_fn(b), _as_fn(c), _as_fn(sigma)
    return ModelSpec(
        T=T, n_steps=n_steps, phi=float(x0),
        b=lambda t, s: _eval(bf, s) + 0.0 * t,
        c=lambda t, s: _eval(cf, s) + 0.0 * t,
        sigma=lambda t, s: _eval(sf, s) + 0.0 * t,
        **game,
    )
