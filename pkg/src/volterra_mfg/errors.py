"""Exception hierarchy shared by every solver in the package."""

from __future__ import annotations


class VolterraMFGError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(VolterraMFGError, ValueError):
    pass


class KernelEvaluationError(VolterraMFGError, ValueError):
    """A kernel returned a non-finite value at a grid point."""

    def __init__(self, t: float, s: float | None = None, value: float = float("nan")):
        self.t = t
        self.s = s
        self.value = value
        where = f"t={t!r}" if s is None else f"(t, s)=({t!r}, {s!r})"
        super().__init__(f"non-finite kernel value {value!r} at {where}")


class NonConvergenceError(VolterraMFGError, RuntimeError):
    def __init__(self, message: str, last_norm: float, iterations: int | None = None):
        self.last_norm = last_norm
        self.iterations = iterations
        super().__init__(f"{message} (last norm {last_norm:.3e})")


class SingularSystemError(VolterraMFGError, RuntimeError):
    pass


class NCEInconsistencyError(VolterraMFGError, RuntimeError):
    def __init__(self, residual: float, tol: float):
        self.residual = residual
        self.tol = tol
        super().__init__(
            f"consistency residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )


class InternalConsistencyError(VolterraMFGError, AssertionError):
    pass
