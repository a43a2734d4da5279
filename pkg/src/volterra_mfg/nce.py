"""Consistency (fixed-point) equation for the population mean and its side conditions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import NCEInconsistencyError, SingularSystemError
from .fredholm import FredholmProblem, SolveReport, fredholm_solve
from .grid_kernels import KernelMatrix, check_grid_function, kernel_compose, volterra_resolvent
from .transforms import ModelSpec, TransformBundle, build_transforms


class ConditionWarning(UserWarning):
    """A sufficient condition for existence/uniqueness or the rates is violated."""


@dataclass(frozen=True, eq=False)
class NCESolution:
    a_hat: np.ndarray
    residual_sup: float
    route: str
    report: SolveReport | None = None


def nce_rhs(a: np.ndarray, model: ModelSpec, bundle: TransformBundle | None = None) -> np.ndarray:
    """Right-hand side of the consistency equation evaluated at ``a``."""
    bundle = bundle or build_transforms(model)
    a = check_grid_function(a, bundle.grid, "a")
    return bundle.phi_hat + bundle.Qf @ a + bundle.QM @ ((model.gamma - 1.0) * a + model.eta) / model.R


def nce_residual(a: np.ndarray, model: ModelSpec, bundle: TransformBundle | None = None) -> float:
    """``sup_t |a(t) - rhs(a)(t)|``."""
    return float(np.max(np.abs(np.asarray(a, dtype=float) - nce_rhs(a, model, bundle))))


def solve_nce(
    model: ModelSpec,
    route: Literal["fredholm-tilde", "volterra-fredholm"] = "fredholm-tilde",
    mode: Literal["direct", "picard"] = "direct",
    bundle: TransformBundle | None = None,
    tol: float | None = None,
) -> NCESolution:
    """Solve for the consistent mean path ``a_hat``.

    The default route eliminates the causal ``f_hat`` term first,
    ``a = phi_tilde + (1/R) int_0^T M_tilde [(gamma-1) a + eta]``, and hands
    the result to the Fredholm solver. ``volterra-fredholm`` solves the
    untransformed equation as a single dense system and is kept as a
    cross-check. The residual is always measured on the untransformed
    equation.
    """
    bundle = bundle or build_transforms(model)
    tol = model.tol if tol is None else tol
    grid = bundle.grid
    R, g1 = model.R, model.gamma - 1.0
    report = None
    if route == "fredholm-tilde":
        A = bundle.M_tilde.scaled(g1)
        psi = bundle.phi_tilde + (model.eta / R) * (bundle.M_tilde.values @ grid.weights)
        report = fredholm_solve(FredholmProblem(A, psi, R), mode=mode, tol=tol)
        a = report.solution
    elif route == "volterra-fredholm":
        n1 = grid.size
        L = np.eye(n1) - bundle.Qf - (g1 / R) * bundle.QM
        rhs = bundle.phi_hat + (model.eta / R) * (bundle.QM @ np.ones(n1))
        try:
            a = np.linalg.solve(L, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystemError(str(exc)) from exc
    else:
        raise ValueError(f"unknown route {route!r}")
    res = nce_residual(a, model, bundle)
    if not np.isfinite(res) or res > tol * max(1.0, float(np.max(np.abs(a)))):
        raise NCEInconsistencyError(res, tol)
    return NCESolution(a, res, route, report)


def cond62_integral(A: KernelMatrix, B: KernelMatrix, k_max: int = 200, tol: float = 1e-14) -> float:
    """``T int int int_0^{s^t} |B_hat(t,r) B(s,r)|^2 dr ds dt`` with ``B_hat = B + P0 o B``.

    ``P0`` is the resolvent of ``A``.
    """
    grid = A.grid
    P0 = volterra_resolvent(A, k_max, tol).kernel
    B_hat = B + kernel_compose(P0, B, "volterra")
    inner = kernel_compose(
        KernelMatrix(grid, B_hat.values ** 2, B_hat.shape),
        KernelMatrix(grid, (B.values ** 2).T, "upper"),
        "min",
    )
    w = grid.weights
    return float(grid.T * (w @ inner.values @ w))


def _triangle_energy(K: KernelMatrix) -> float:
    """``int_0^T int_0^t |K(t,s)|^2 ds dt``."""
    g = K.grid
    return float(g.weights @ ((K.values ** 2 * g.causal_weights).sum(axis=1)))


@dataclass(frozen=True, eq=False)
class ConditionReport:
    R: float
    N: int
    thm31_margin: float
    thm32_margin: float
    cond62_case_fc: float
    cond62_case_0c: float
    L: float
    K1: float
    K2: float

    @property
    def cond62_threshold(self) -> float:
        return self.R ** 2 / 3.0

    def lemma64_at(self, N: int) -> float:
        return (1.0 + self.K2) * self.K1 * 360.0 * self.L ** 2 / (N ** 2 * self.R ** 2)

    @property
    def lemma64_lhs(self) -> float:
        return self.lemma64_at(self.N)

    def rows(self) -> list[tuple[str, float, float, bool]]:
        """``(name, value, threshold, passed)``; every condition is ``value < threshold``."""
        thr62 = self.cond62_threshold
        return [
            ("thm31_margin", self.thm31_margin, 1.0, self.thm31_margin < 1.0),
            ("thm32_margin", self.thm32_margin, 1.0, self.thm32_margin < 1.0),
            ("cond62_case_fc", self.cond62_case_fc, thr62, self.cond62_case_fc < thr62),
            ("cond62_case_0c", self.cond62_case_0c, thr62, self.cond62_case_0c < thr62),
            ("lemma64_lhs", self.lemma64_lhs, 0.5, self.lemma64_lhs < 0.5),
        ]

    @property
    def passes(self) -> bool:
        return all(ok for *_, ok in self.rows())


def check_conditions(model: ModelSpec, N: int, bundle: TransformBundle | None = None,
                     warn: bool = True) -> ConditionReport:
    """Evaluate every sufficient condition; failures are reported, never raised."""
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N!r}")
    bundle = bundle or build_transforms(model)
    grid = bundle.grid
    w = grid.weights
    R = model.R
    thm31 = float(np.max((bundle.M.values ** 2) @ w) / R)
    thm32 = float(np.max((((model.gamma - 1.0) * bundle.M_tilde.values) ** 2) @ w) / R)
    fc = cond62_integral(bundle.f_hat, bundle.c_hat, model.k_max, model.resolvent_tol)
    zero = KernelMatrix(grid, np.zeros((grid.size, grid.size)), "lower")
    oc = cond62_integral(zero, bundle.c_hat, model.k_max, model.resolvent_tol)
    P0 = bundle.P_tilde
    report = ConditionReport(
        R=R, N=int(N), thm31_margin=thm31, thm32_margin=thm32,
        cond62_case_fc=fc, cond62_case_0c=oc,
        L=_triangle_energy(bundle.c_hat), K1=_triangle_energy(bundle.f_hat), K2=_triangle_energy(P0),
    )
    if warn:
        for name, value, thr, ok in report.rows():
            if not ok:
                warnings.warn(f"{name} = {value:.6g} is not below {thr:.6g}", ConditionWarning, stacklevel=2)
    return report
