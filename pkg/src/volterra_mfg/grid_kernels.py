"""Uniform time grids, sampled kernels, trapezoid compositions and resolvents.

Conventions used throughout the package:

* a kernel ``k(t, s)`` is stored as ``values[i, j] = k(t_i, t_j)``; the first
  argument always indexes rows;
* a Volterra kernel lives on ``s <= t`` and is stored ``"lower"``;
* grid functions are plain 1-D float arrays of length ``n_steps + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Literal, Union

import numpy as np
from scipy.linalg import solve_triangular

from .errors import InvalidArgumentError, KernelEvaluationError, NonConvergenceError

Shape = Literal["lower", "upper", "full"]
ComposeRule = Literal["volterra", "causal", "full", "min"]
KernelLike = Union[Callable[[np.ndarray, np.ndarray], np.ndarray], np.ndarray, float, int, None]
FunctionLike = Union[Callable[[np.ndarray], np.ndarray], np.ndarray, float, int, None]

_SHAPES = ("lower", "upper", "full")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition of ``[0, T]`` with composite trapezoid weights."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (isinstance(self.T, (int, float, np.floating)) and math.isfinite(self.T) and self.T > 0):
            raise InvalidArgumentError(f"horizon must be positive and finite, got {self.T!r}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 2:
            raise InvalidArgumentError(f"n_steps must be an integer >= 2, got {self.n_steps!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def h(self) -> float:
        return self.T / self.n_steps

    @property
    def size(self) -> int:
        return self.n_steps + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.size, dtype=float) * self.h
        t[-1] = self.T
        t.setflags(write=False)
        return t

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.size, self.h)
        w[0] = w[-1] = 0.5 * self.h
        w.setflags(write=False)
        return w

    @cached_property
    def causal_weights(self) -> np.ndarray:
        """``Omega[i, k]``: trapezoid weight of node ``k`` for an integral over ``[0, t_i]``.

        Row 0 is identically zero (empty interval).
        """
        n1 = self.size
        om = np.tril(np.full((n1, n1), self.h))
        om[:, 0] = 0.5 * self.h
        idx = np.arange(n1)
        om[idx, idx] = 0.5 * self.h
        om[0, 0] = 0.0
        om.setflags(write=False)
        return om

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t`` (to round-off); raises otherwise."""
        k = t / self.h
        i = int(round(k))
        if abs(k - i) > 1e-9 * max(1.0, abs(k)):
            raise InvalidArgumentError(f"{t!r} is not a multiple of the grid step {self.h!r}")
        return i

    def check_same(self, other: "TimeGrid") -> None:
        if other != self:
            raise InvalidArgumentError(f"grid mismatch: {self} vs {other}")


def make_uniform_grid(T: float, n_steps: int) -> TimeGrid:
    return TimeGrid(T, n_steps)


def _support_mask(n1: int, shape: Shape) -> np.ndarray:
    if shape == "lower":
        return np.tri(n1, dtype=bool)
    if shape == "upper":
        return np.tri(n1, dtype=bool).T
    if shape == "full":
        return np.ones((n1, n1), dtype=bool)
    raise InvalidArgumentError(f"unknown kernel shape {shape!r}; expected one of {_SHAPES}")


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    """A two-variable function sampled on a grid, ``values[i, j] = k(t_i, t_j)``."""

    grid: TimeGrid
    values: np.ndarray
    shape: Shape = "full"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n1 = self.grid.size
        if v.shape != (n1, n1):
            raise InvalidArgumentError(f"kernel values must be {(n1, n1)}, got {v.shape}")
        mask = _support_mask(n1, self.shape)
        if np.any(v[~mask] != 0.0):
            raise InvalidArgumentError(f"{self.shape} kernel has non-zero entries outside its support")
        if not np.all(np.isfinite(v)):
            i, j = np.argwhere(~np.isfinite(v))[0]
            raise KernelEvaluationError(float(self.grid.nodes[i]), float(self.grid.nodes[j]), float(v[i, j]))
        object.__setattr__(self, "values", _readonly(v))

    @property
    def T(self) -> "KernelMatrix":
        flipped = {"lower": "upper", "upper": "lower", "full": "full"}[self.shape]
        return KernelMatrix(self.grid, self.values.T, flipped)

    def with_shape(self, shape: Shape) -> "KernelMatrix":
        return KernelMatrix(self.grid, np.where(_support_mask(self.grid.size, shape), self.values, 0.0), shape)

    def __add__(self, other: "KernelMatrix") -> "KernelMatrix":
        self.grid.check_same(other.grid)
        shape = self.shape if self.shape == other.shape else "full"
        return KernelMatrix(self.grid, self.values + other.values, shape)

    def scaled(self, factor: float) -> "KernelMatrix":
        return KernelMatrix(self.grid, factor * self.values, self.shape)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


def zero_kernel(grid: TimeGrid, shape: Shape = "lower") -> KernelMatrix:
    return KernelMatrix(grid, np.zeros((grid.size, grid.size)), shape)


def _evaluate_pairs(k: Callable, t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Evaluate ``k`` on broadcast arrays, falling back to scalar calls."""
    with np.errstate(all="ignore"):
        try:
            out = np.asarray(k(t, s), dtype=float)
            return np.broadcast_to(out, np.broadcast(t, s).shape).astype(float)
        except (TypeError, ValueError):
            flat = [float(k(float(a), float(b))) for a, b in zip(t.ravel(), s.ravel())]
            return np.asarray(flat, dtype=float).reshape(t.shape)


def sample_kernel(k: KernelLike, grid: TimeGrid, shape: Shape = "lower") -> KernelMatrix:
    """Sample ``k(t, s)`` on the grid, zeroing entries outside ``shape``.

    ``k`` may be a callable, a scalar constant, ``None`` (zero) or an already
    sampled ``(n+1, n+1)`` array.
    """
    n1 = grid.size
    mask = _support_mask(n1, shape)
    if isinstance(k, KernelMatrix):
        grid.check_same(k.grid)
        vals = k.values
    elif k is None:
        vals = np.zeros((n1, n1))
    elif callable(k):
        t, s = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
        vals = _evaluate_pairs(k, t, s)
    else:
        arr = np.asarray(k, dtype=float)
        if arr.ndim == 0:
            vals = np.full((n1, n1), float(arr))
        elif arr.shape == (n1, n1):
            vals = arr
        else:
            raise InvalidArgumentError(f"sampled kernel must have shape {(n1, n1)}, got {arr.shape}")
    vals = np.where(mask, vals, 0.0)
    bad = mask & ~np.isfinite(vals)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise KernelEvaluationError(float(grid.nodes[i]), float(grid.nodes[j]), float(vals[i, j]))
    return KernelMatrix(grid, vals, shape)


def sample_function(g: FunctionLike, grid: TimeGrid) -> np.ndarray:
    """Sample a one-variable function on the grid nodes."""
    n1 = grid.size
    if g is None:
        vals = np.zeros(n1)
    elif callable(g):
        with np.errstate(all="ignore"):
            try:
                vals = np.broadcast_to(np.asarray(g(grid.nodes), dtype=float), (n1,)).astype(float)
            except (TypeError, ValueError):
                vals = np.array([float(g(float(t))) for t in grid.nodes])
    else:
        arr = np.asarray(g, dtype=float)
        if arr.ndim == 0:
            vals = np.full(n1, float(arr))
        elif arr.shape == (n1,):
            vals = arr.copy()
        else:
            raise InvalidArgumentError(f"grid function must have length {n1}, got shape {arr.shape}")
    bad = ~np.isfinite(vals)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise KernelEvaluationError(float(grid.nodes[i]), None, float(vals[i]))
    return vals


def check_grid_function(x, grid: TimeGrid, name: str = "grid function") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape != (grid.size,):
        raise InvalidArgumentError(f"{name} must have length {grid.size}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite values")
    return arr


# -- quadrature operators -------------------------------------------------

def volterra_operator(K: KernelMatrix) -> np.ndarray:
    """Matrix of ``x -> int_0^t K(t, s) x(s) ds`` under the trapezoid rule."""
    return K.values * K.grid.causal_weights


def fredholm_operator(K: KernelMatrix) -> np.ndarray:
    """Matrix of ``x -> int_0^T K(t, s) x(s) ds`` under the trapezoid rule."""
    return K.values * K.grid.weights[None, :]


def causal_integral(K: KernelMatrix, x: np.ndarray) -> np.ndarray:
    return volterra_operator(K) @ x


def full_integral(K: KernelMatrix, x: np.ndarray) -> np.ndarray:
    return fredholm_operator(K) @ x


def volterra_operator_inverse(V: np.ndarray) -> np.ndarray:
    """``(I - V)^{-1}`` for a lower-triangular quadrature matrix ``V``."""
    n1 = V.shape[0]
    L = np.eye(n1) - np.tril(V)
    return solve_triangular(L, np.eye(n1), lower=True)


def kernel_compose(A: KernelMatrix, B: KernelMatrix, rule: ComposeRule = "volterra") -> KernelMatrix:
    """Trapezoid quadrature of ``C(t_i, t_j) = int A(t_i, r) B(r, t_j) dr``.

    The r-range depends on ``rule``:

    ``volterra``  r in [t_j, t_i] (zero when j > i, result is lower-triangular)
    ``causal``    r in [0, t_i]
    ``full``      r in [0, T]
    ``min``       r in [0, min(t_i, t_j)]
    """
    A.grid.check_same(B.grid)
    grid = A.grid
    n1, h = grid.size, grid.h
    a, b = A.values, B.values
    idx = np.arange(n1)
    I, J = np.meshgrid(idx, idx, indexing="ij")
    if rule == "volterra":
        S = np.tril(a) @ np.tril(b)
        lo, hi = J, I
    elif rule == "causal":
        S = np.tril(a) @ b
        lo, hi = np.zeros_like(I), I
    elif rule == "full":
        S = a @ b
        lo, hi = np.zeros_like(I), np.full_like(I, n1 - 1)
    elif rule == "min":
        S = np.tril(a) @ np.triu(b)
        lo, hi = np.zeros_like(I), np.minimum(I, J)
    else:
        raise InvalidArgumentError(f"unknown composition rule {rule!r}")
    ends = a[I, lo] * b[lo, J] + a[I, hi] * b[hi, J]
    C = h * S - 0.5 * h * ends
    C = np.where(lo < hi, C, 0.0)
    return KernelMatrix(grid, C, "lower" if rule == "volterra" else "full")


# -- resolvent --------------------------------------------------------------

def iterated_kernel_bound(M: float, T: float, k: int) -> float:
    """``M^k T^(k-1) / (k-1)!``, evaluated in log space."""
    if M == 0.0:
        return 0.0
    logb = k * math.log(M) + (k - 1) * math.log(T) - math.lgamma(k)
    return math.exp(logb) if logb < 700 else math.inf


@dataclass(frozen=True, eq=False)
class ResolventResult:
    """Truncated Neumann series ``P = sum_k Lambda^k`` with diagnostics."""

    kernel: KernelMatrix
    terms: int
    last_term_norm: float
    truncation_bound: float
    term_norms: tuple = field(default=())
    term_bounds: tuple = field(default=())


def volterra_resolvent(K: KernelMatrix, k_max: int = 200, tol: float = 1e-14) -> ResolventResult:
    """Resolvent of a lower-triangular kernel by its iterated-kernel series.

    ``Lambda^1 = K`` and ``Lambda^{k+1}(s, t) = int_t^s K(s, r) Lambda^k(r, t) dr``
    with the trapezoid rule. Summation stops at the first term whose sup norm
    is below ``tol`` (that term is still added) or after ``k_max`` terms.
    """
    if K.shape != "lower":
        raise InvalidArgumentError("resolvent requires a lower-triangular kernel")
    if k_max < 1 or not tol > 0:
        raise InvalidArgumentError("k_max must be >= 1 and tol > 0")
    grid = K.grid
    M = K.sup_norm()
    lam = K
    total = K.values.copy()
    norms = [lam.sup_norm()]
    bounds = [iterated_kernel_bound(M, grid.T, 1)]
    k = 1
    while norms[-1] >= tol and k < k_max:
        lam = kernel_compose(K, lam, "volterra")
        k += 1
        total += lam.values
        norms.append(lam.sup_norm())
        bounds.append(iterated_kernel_bound(M, grid.T, k))
    if norms[-1] >= tol and bounds[-1] >= tol:
        raise NonConvergenceError(f"resolvent series did not converge in {k_max} terms", norms[-1], k)
    return ResolventResult(
        kernel=KernelMatrix(grid, total, "lower"),
        terms=k,
        last_term_norm=norms[-1],
        truncation_bound=bounds[-1],
        term_norms=tuple(norms),
        term_bounds=tuple(bounds),
    )
