"""Second-kind Fredholm solver and the best-response map for the mean path."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InvalidArgumentError, NonConvergenceError, SingularSystemError
from .grid_kernels import KernelMatrix, TimeGrid, check_grid_function, fredholm_operator
from .transforms import ModelSpec, TransformBundle, build_transforms

log = logging.getLogger(__name__)

# condition numbers above this are treated as numerically singular unless
# the computed solution still meets the residual tolerance
_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class FredholmProblem:
    """``x(t) = psi(t) + (1/R) int_0^T A(t,s) x(s) ds``."""

    A: KernelMatrix
    psi: np.ndarray
    R: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.R) and self.R > 0):
            raise InvalidArgumentError(f"R must be positive, got {self.R!r}")
        psi = check_grid_function(self.psi, self.A.grid, "psi")
        object.__setattr__(self, "psi", psi)

    @property
    def grid(self) -> TimeGrid:
        return self.A.grid

    def operator(self) -> np.ndarray:
        return fredholm_operator(self.A) / self.R

    def residual(self, x: np.ndarray) -> float:
        r = self.psi + self.operator() @ x - x
        return float(np.max(np.abs(r)))


@dataclass(frozen=True, eq=False)
class SolveReport:
    solution: np.ndarray
    residual_sup: float
    iterations: int
    contraction_margin: float
    mode: str
    condition_number: float = float("nan")

    @property
    def within_contraction(self) -> bool:
        """Whether the sufficient condition ``sup_t int |A|^2 ds < R`` holds."""
        return self.contraction_margin < 1.0


def contraction_margin(A: KernelMatrix, R: float) -> float:
    """``sup_t int_0^T |A(t,s)|^2 ds / R``."""
    return float(np.max((A.values ** 2) @ A.grid.weights) / R)


def fredholm_solve(
    p: FredholmProblem,
    mode: Literal["direct", "picard"] = "direct",
    tol: float = 1e-10,
    max_iter: int = 10_000,
) -> SolveReport:
    """Nystrom solution of the trapezoid-discretized equation.

    ``direct`` solves ``(I - Q_A / R) x = psi`` densely. ``picard`` iterates
    ``x <- psi + Q_A x / R`` until the sup residual is at most ``tol / 10``.
    """
    if tol <= 0 or max_iter < 1:
        raise InvalidArgumentError("tol must be > 0 and max_iter >= 1")
    margin = contraction_margin(p.A, p.R)
    psi = p.psi
    if not np.any(p.A.values):
        return SolveReport(psi.copy(), 0.0, 0, margin, mode, 1.0)
    K = p.operator()

    if mode == "direct":
        n1 = psi.size
        L = np.eye(n1) - K
        cond = float(np.linalg.cond(L))
        try:
            x = np.linalg.solve(L, psi)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(f"Fredholm matrix is singular: {exc}") from exc
        res = float(np.max(np.abs(psi + K @ x - x))) if np.all(np.isfinite(x)) else float("inf")
        scale = max(1.0, float(np.max(np.abs(x)))) if np.isfinite(res) else 1.0
        if not np.isfinite(res) or (cond > _COND_LIMIT and res > tol):
            raise SingularSystemError(
                f"Fredholm matrix is numerically singular (condition {cond:.3e}, residual {res:.3e})"
            )
        if res > tol * scale:
            raise SingularSystemError(f"direct solve residual {res:.3e} exceeds tolerance {tol:.3e}")
        return SolveReport(x, res, 0, margin, mode, cond)

    if mode != "picard":
        raise InvalidArgumentError(f"unknown mode {mode!r}")
    x = psi.copy()
    res = float("inf")
    for it in range(1, max_iter + 1):
        x_new = psi + K @ x
        res = float(np.max(np.abs(psi + K @ x_new - x_new)))
        x = x_new
        # stop well before overflow once the iterates diverge
        if not np.isfinite(res) or res > 1e150:
            break
        if res <= 0.1 * tol:
            return SolveReport(x, res, it, margin, mode)
    raise NonConvergenceError("Picard iteration did not converge", res, max_iter)


def mean_forcing(bundle: TransformBundle, a: np.ndarray, gamma: float, eta: float, R: float) -> np.ndarray:
    """``phi_hat + int_0^t f_hat a + (1/R) int_0^T M (gamma a + eta)``."""
    a = check_grid_function(a, bundle.grid, "a")
    return bundle.phi_hat + bundle.Qf @ a + bundle.QM @ (gamma * a + eta) / R


def gamma_apply(
    bundle: TransformBundle,
    a: np.ndarray,
    gamma: float,
    eta: float,
    R: float,
    mode: Literal["direct", "picard"] = "direct",
    tol: float = 1e-10,
) -> np.ndarray:
    """Best-response mean path for an assumed population mean ``a``.

    Solves ``x = phi_hat + int f_hat a + (1/R) int_0^T M (gamma a + eta - x)``.
    """
    psi = mean_forcing(bundle, a, gamma, eta, R)
    neg_M = bundle.M.scaled(-1.0)
    return fredholm_solve(FredholmProblem(neg_M, psi, R), mode=mode, tol=tol).solution


def gamma_apply_model(model: ModelSpec, a: np.ndarray, mode: str = "direct") -> np.ndarray:
    return gamma_apply(build_transforms(model), a, model.gamma, model.eta, model.R, mode, model.tol)
