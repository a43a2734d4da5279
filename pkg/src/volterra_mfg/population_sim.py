"""Finite-population closed loop, Monte Carlo costs, rates and unilateral deviations.

Every player uses the decentralized control built from ``a_hat``. By
exchangeability the state of player ``i`` is::

    x_i = alpha + beta_own . dW^i + beta_avg . dWbar,   dWbar = (1/N) sum_l dW^l

and the population average is ``x^N = alpha + (beta_own + beta_avg) . dWbar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .closed_loop import AffineState, control_kernel, limit_cost, limit_optimal_state, svf_solve
from .errors import InvalidArgumentError, SingularSystemError
from .grid_kernels import TimeGrid, check_grid_function
from .nce import solve_nce
from .rng import batch_means_stderr, ordered_map, path_batches, path_increments, resolve_threads
from .transforms import ModelSpec, TransformBundle, build_transforms, target

_U64 = 1 << 64


@dataclass(frozen=True)
class SimConfig:
    N: int = 2
    paths: int = 1000
    seed: int = 0
    batch_size: int = 250
    threads: int | None = None
    n_batches: int = 20

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidArgumentError(f"N must be an integer >= 2, got {self.N!r}")
        if int(self.paths) != self.paths or self.paths < 1:
            raise InvalidArgumentError(f"paths must be a positive integer, got {self.paths!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < _U64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.batch_size < 1 or self.n_batches < 2:
            raise InvalidArgumentError("batch_size must be >= 1 and n_batches >= 2")

    def with_N(self, N: int) -> "SimConfig":
        return SimConfig(N, self.paths, self.seed, self.batch_size, self.threads, self.n_batches)


@dataclass(frozen=True, eq=False)
class PopulationState:
    grid: TimeGrid
    N: int
    a_hat: np.ndarray
    alpha: np.ndarray
    beta_own: np.ndarray
    beta_avg: np.ndarray
    control: AffineState
    limit_state: AffineState
    limit_control: AffineState

    @property
    def player(self) -> AffineState:
        return AffineState(self.grid, self.alpha, self.beta_own, self.beta_avg, self.N)

    @property
    def mean_field(self) -> AffineState:
        return AffineState(self.grid, self.alpha, None, self.beta_own + self.beta_avg, self.N)


def solve_population(model: ModelSpec, a_hat: np.ndarray, N: int,
                     bundle: TransformBundle | None = None) -> PopulationState:
    """Exchangeable closed-loop representation for ``N`` players.

    The own-noise response is the limit problem's; the deterministic part
    and the response to the average noise come from one Volterra-Fredholm
    solve with the coupling kernel ``f_hat``.
    """
    if int(N) != N or N < 2:
        raise InvalidArgumentError(f"N must be an integer >= 2, got {N!r}")
    bundle = bundle or build_transforms(model)
    grid = bundle.grid
    a_hat = check_grid_function(a_hat, grid, "a_hat")
    g = target(model, a_hat)
    lim = limit_optimal_state(model, a_hat, bundle)
    forcing = AffineState(grid, bundle.phi_hat + bundle.QM @ g / model.R, None, bundle.Qf @ lim.beta_own, N)
    agg = svf_solve(bundle.f_hat, bundle.c_hat, forcing, model.R, True, model.k_max, model.resolvent_tol)
    ck = control_kernel(model, a_hat, bundle)
    player = AffineState(grid, agg.alpha, lim.beta_own, agg.beta_avg, N)
    return PopulationState(
        grid=grid, N=int(N), a_hat=a_hat, alpha=agg.alpha, beta_own=lim.beta_own, beta_avg=agg.beta_avg,
        control=ck.apply(player), limit_state=lim, limit_control=ck.apply(lim),
    )


def mean_field_error(pop: PopulationState) -> float:
    """``E int_0^T |x^N - a_hat|^2 dt``, exact for the affine representation."""
    return pop.mean_field.shifted(-pop.a_hat).energy()


def player_cost_exact(model: ModelSpec, pop: PopulationState) -> float:
    """Cost of a representative player when everybody uses the decentralized control."""
    g = 1.0 - model.gamma
    y = AffineState(pop.grid, g * pop.alpha - model.eta, pop.beta_own,
                    g * pop.beta_avg - model.gamma * pop.beta_own, pop.N)
    return y.energy() + model.R * pop.control.energy()


def limit_cost_exact(model: ModelSpec, pop: PopulationState) -> float:
    return limit_cost(model, pop.limit_state, pop.limit_control, pop.a_hat)


# -- sampling -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Sampled trajectories; player axis 1, time axis last."""

    paths: range
    dW: np.ndarray
    x: np.ndarray
    x_mean_field: np.ndarray
    u: np.ndarray
    x_limit: np.ndarray
    u_limit: np.ndarray


def _draw(cfg: SimConfig, grid: TimeGrid, paths: range) -> np.ndarray:
    return np.stack([path_increments(cfg.seed, p, cfg.N, grid.n_steps, grid.h) for p in paths])


def _average(dW: np.ndarray) -> np.ndarray:
    # sorting first makes the sum independent of player labels
    return np.sort(dW, axis=1).sum(axis=1) / dW.shape[1]


def sample_paths(state: PopulationState, cfg: SimConfig, paths: range | None = None,
                 increments: np.ndarray | None = None) -> PathEnsemble:
    """Trajectories of all players, the population average and the limit problem.

    ``increments`` (shape ``(paths, N, n_steps)``) overrides the generator.
    """
    grid = state.grid
    if cfg.N != state.N:
        raise InvalidArgumentError(f"config has N={cfg.N} but the state was solved for N={state.N}")
    paths = range(cfg.paths) if paths is None else paths
    dW = _draw(cfg, grid, paths) if increments is None else np.asarray(increments, dtype=float)
    if dW.shape[1:] != (state.N, grid.n_steps):
        raise InvalidArgumentError(f"increments must have shape (paths, {state.N}, {grid.n_steps})")
    dWbar = _average(dW)
    ctl, lim, limu = state.control, state.limit_state, state.limit_control
    x = state.alpha + dW @ state.beta_own.T + (dWbar @ state.beta_avg.T)[:, None, :]
    xN = state.alpha + dWbar @ (state.beta_own + state.beta_avg).T
    u = ctl.alpha + dW @ ctl.beta_own.T + (dWbar @ ctl.beta_avg.T)[:, None, :]
    xl = lim.alpha + dW @ lim.beta_own.T
    ul = limu.alpha + dW @ limu.beta_own.T
    return PathEnsemble(paths, dW, x, xN, u, xl, ul)


# -- cost estimation ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CostEstimate:
    paths: int
    player_cost: float
    player_cost_se: float
    limit_cost: float
    limit_cost_se: float
    gap: float
    gap_se: float
    mf_error: float
    mf_error_se: float
    per_player_cost: np.ndarray
    per_player_limit_cost: np.ndarray


def _path_costs(ens: PathEnsemble, model: ModelSpec, a_hat: np.ndarray, w: np.ndarray):
    g = target(model, a_hat)
    y = ens.x - model.gamma * ens.x_mean_field[:, None, :] - model.eta
    J = (y ** 2 + model.R * ens.u ** 2) @ w
    Jl = ((ens.x_limit - g) ** 2 + model.R * ens.u_limit ** 2) @ w
    mf = ((ens.x_mean_field - a_hat) ** 2) @ w
    return J, Jl, mf


def _summarize(J: np.ndarray, Jl: np.ndarray, mf: np.ndarray, n_batches: int) -> CostEstimate:
    Jp, Jlp = J.mean(axis=1), Jl.mean(axis=1)
    diff = Jp - Jlp
    se = lambda v: batch_means_stderr(v, n_batches)  # noqa: E731
    return CostEstimate(
        paths=J.shape[0],
        player_cost=float(Jp.mean()), player_cost_se=se(Jp),
        limit_cost=float(Jlp.mean()), limit_cost_se=se(Jlp),
        gap=float(diff.mean()), gap_se=se(diff),
        mf_error=float(mf.mean()), mf_error_se=se(mf),
        per_player_cost=J.mean(axis=0), per_player_limit_cost=Jl.mean(axis=0),
    )


def estimate_costs(ensemble: PathEnsemble, model: ModelSpec, a_hat: np.ndarray,
                   n_batches: int = 20) -> CostEstimate:
    """Monte Carlo estimates of the finite-population and limit costs."""
    w = model.grid.weights
    J, Jl, mf = _path_costs(ensemble, model, np.asarray(a_hat, dtype=float), w)
    return _summarize(J, Jl, mf, n_batches)


def monte_carlo_costs(state: PopulationState, model: ModelSpec, cfg: SimConfig) -> CostEstimate:
    """Streaming version of :func:`estimate_costs` over ``cfg.paths`` paths."""
    w = state.grid.weights
    # keep a batch at about 64k player-paths
    bs = max(1, min(cfg.batch_size, 65536 // state.N))

    def run(batch: range):
        return _path_costs(sample_paths(state, cfg, batch), model, state.a_hat, w)

    parts = ordered_map(run, path_batches(cfg.paths, bs), resolve_threads(cfg.threads))
    J = np.concatenate([p[0] for p in parts])
    Jl = np.concatenate([p[1] for p in parts])
    mf = np.concatenate([p[2] for p in parts])
    return _summarize(J, Jl, mf, cfg.n_batches)


# -- rates -----------------------------------------------------------------------

@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    ci_low: float
    ci_high: float
    intercept: float


def fit_loglog(Ns: Sequence[int], values: Sequence[float], scale: float = 1.0,
               rtol: float = 1e-12) -> SlopeFit | None:
    """Least-squares slope of ``log|value|`` against ``log N`` with a 95% interval.

    Returns ``None`` when the data are at round-off level, i.e. all below
    ``rtol * scale`` (rate-degenerate).
    """
    floor = rtol * max(abs(float(scale)), 1e-300)
    v = np.abs(np.asarray(values, dtype=float))
    x = np.log(np.asarray(Ns, dtype=float))
    if v.size < 2 or np.max(v) < floor or np.min(v) <= 0.0 or not np.all(np.isfinite(v)):
        return None
    y = np.log(v)
    if v.size == 2:
        slope = (y[1] - y[0]) / (x[1] - x[0])
        return SlopeFit(float(slope), float("nan"), float("nan"), float("nan"), float(y[0] - slope * x[0]))
    fit = stats.linregress(x, y)
    q = stats.t.ppf(0.975, v.size - 2)
    return SlopeFit(float(fit.slope), float(fit.stderr), float(fit.slope - q * fit.stderr),
                    float(fit.slope + q * fit.stderr), float(fit.intercept))


@dataclass(frozen=True, eq=False)
class NashGapReport:
    Ns: tuple
    mf_error: np.ndarray
    mf_stderr: np.ndarray
    mf_error_mc: np.ndarray
    mf_error_mc_se: np.ndarray
    cost_gap: np.ndarray
    gap_stderr: np.ndarray
    cost_gap_exact: np.ndarray
    player_cost: np.ndarray
    player_cost_se: np.ndarray
    limit_cost: float
    eps_a: np.ndarray
    eps_b: np.ndarray
    mf_fit: SlopeFit | None
    gap_fit: SlopeFit | None
    gap_exact_fit: SlopeFit | None
    gap_constant: float
    paths: int
    seed: int

    @property
    def mf_degenerate(self) -> bool:
        return self.mf_fit is None

    @property
    def gap_degenerate(self) -> bool:
        return self.gap_fit is None

    def gap_bound(self, N: int) -> float:
        """``C / sqrt(N)`` with ``C`` fitted at the smallest population."""
        return self.gap_constant / math.sqrt(N)


def rate_experiment(model: ModelSpec, Ns: Sequence[int], cfg: SimConfig,
                    a_hat: np.ndarray | None = None, bundle: TransformBundle | None = None) -> NashGapReport:
    """Mean-field error (exact) and cost gap (Monte Carlo) across population sizes."""
    Ns = tuple(int(n) for n in Ns)
    if len(Ns) < 2 or any(n < 2 for n in Ns):
        raise InvalidArgumentError(f"need at least two population sizes, each >= 2; got {Ns}")
    bundle = bundle or build_transforms(model)
    if a_hat is None:
        a_hat = solve_nce(model, bundle=bundle).a_hat
    rows = []
    for N in Ns:
        pop = solve_population(model, a_hat, N, bundle)
        mc = monte_carlo_costs(pop, model, cfg.with_N(N))
        J = player_cost_exact(model, pop)
        Jbar = limit_cost_exact(model, pop)
        rows.append((mean_field_error(pop), mc, J - Jbar, Jbar))
    mf = np.array([r[0] for r in rows])
    gap = np.array([r[1].gap for r in rows])
    gap_se = np.array([r[1].gap_se for r in rows])
    gap_exact = np.array([r[2] for r in rows])
    eps_a = np.sqrt(np.maximum(mf, 0.0))
    return NashGapReport(
        Ns=Ns, mf_error=mf, mf_stderr=np.zeros_like(mf),
        mf_error_mc=np.array([r[1].mf_error for r in rows]),
        mf_error_mc_se=np.array([r[1].mf_error_se for r in rows]),
        cost_gap=gap, gap_stderr=gap_se, cost_gap_exact=gap_exact,
        player_cost=np.array([r[1].player_cost for r in rows]),
        player_cost_se=np.array([r[1].player_cost_se for r in rows]),
        limit_cost=float(rows[0][3]),
        eps_a=eps_a, eps_b=abs(model.gamma) * eps_a,
        mf_fit=fit_loglog(Ns, mf), gap_fit=fit_loglog(Ns, gap, scale=rows[0][3]),
        gap_exact_fit=fit_loglog(Ns, gap_exact, scale=rows[0][3]),
        gap_constant=float(abs(gap[0]) * math.sqrt(Ns[0])),
        paths=cfg.paths, seed=cfg.seed,
    )


# -- unilateral deviations ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PlayerControl:
    """Open-loop affine control of player 1 in an N-player game.

    ``u(t_k) = alpha[k] + sum_j own[k, j] dW^1_j + sum_j others[k, j] S_j`` where
    ``S`` is the average increment of players 2..N. Coefficients must be
    adapted: entries with ``j >= k`` are zero.
    """

    grid: TimeGrid
    alpha: np.ndarray
    own: np.ndarray | None = None
    others: np.ndarray | None = None

    def __post_init__(self):
        n1, n = self.grid.size, self.grid.n_steps
        a = np.asarray(self.alpha, dtype=float)
        if a.shape != (n1,):
            raise InvalidArgumentError(f"control alpha must have length {n1}")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("control has a non-finite second moment")
        object.__setattr__(self, "alpha", a)
        future = ~np.tri(n1, n, -1, dtype=bool)
        for name in ("own", "others"):
            v = getattr(self, name)
            v = np.zeros((n1, n)) if v is None else np.asarray(v, dtype=float)
            if v.shape != (n1, n):
                raise InvalidArgumentError(f"{name} coefficients must have shape {(n1, n)}")
            if not np.all(np.isfinite(v)):
                raise InvalidArgumentError("control has a non-finite second moment")
            if np.any(v[future]):
                raise InvalidArgumentError(f"{name} coefficients are not adapted")
            object.__setattr__(self, name, v)

    @classmethod
    def from_affine(cls, u: AffineState, N: int) -> "PlayerControl":
        """Re-express ``alpha + U_o dW^1 + U_a dWbar`` with ``dWbar = dW^1/N + (N-1)/N S``."""
        return cls(u.grid, u.alpha, u.beta_own + u.beta_avg / N, u.beta_avg * (N - 1) / N)

    def scaled(self, factor: float) -> "PlayerControl":
        return PlayerControl(self.grid, factor * self.alpha, factor * self.own, factor * self.others)

    def delayed(self, steps: int) -> "PlayerControl":
        """Apply the same law ``steps`` grid steps later (initial value held)."""
        if steps < 0:
            raise InvalidArgumentError("delay must be non-negative")
        a = np.concatenate([np.full(steps, self.alpha[0]), self.alpha])[: self.grid.size]
        pad = np.zeros((steps, self.grid.n_steps))
        own = np.concatenate([pad, self.own])[: self.grid.size]
        oth = np.concatenate([pad, self.others])[: self.grid.size]
        return PlayerControl(self.grid, a, own, oth)


@dataclass(frozen=True, eq=False)
class _Response:
    """Player 1 state and population average, split by noise source."""

    x_alpha: np.ndarray
    x_own: np.ndarray
    x_S: np.ndarray
    m_alpha: np.ndarray
    m_own: np.ndarray
    m_S: np.ndarray


class _DeviationSystem:
    """Linear response of player 1 and the others to player 1's control.

    Unknowns per noise component are player 1's coefficient ``x1`` and a
    representative other player's ``xo``; the population average is
    ``m = x1/N + (N-1)/N (xo + e)`` with ``e`` the others' idiosyncratic
    response, which enters only through the ``S`` component.
    """

    def __init__(self, model: ModelSpec, pop: PopulationState, bundle: TransformBundle):
        self.model, self.pop, self.bundle = model, pop, bundle
        self.grid = bundle.grid
        self.N = pop.N
        self.rho = (pop.N - 1) / pop.N
        self.g = target(model, pop.a_hat)
        n1 = self.grid.size
        Qf = bundle.Qf
        self._top = np.hstack([np.eye(n1) - Qf / self.N, -self.rho * Qf])
        self._bot_left = -Qf / self.N
        self._bot_base = np.eye(n1) - self.rho * Qf

    def _matrix(self, k0: int) -> np.ndarray:
        """Block operator for a component whose conditional expectations keep nodes ``k >= k0``."""
        b = self.bundle
        CDG = b.C[:, k0:] @ b.G[k0:, :] / self.model.R
        return np.vstack([self._top, np.hstack([self._bot_left, self._bot_base + CDG])])

    def _rhs(self, k0: int, s1, so, e, go):
        b = self.bundle
        CDG = b.C[:, k0:] @ b.G[k0:, :] / self.model.R
        fe = self.rho * (b.Qf @ e)
        return np.concatenate([s1 + fe, so + fe + CDG @ go])

    def _components(self):
        """Yield ``(weight, k0, s1, so, e, go, index)`` per noise component."""
        b, grid, n1 = self.bundle, self.grid, self.grid.size
        z = np.zeros(n1)
        yield 1.0, 0, b.phi_hat, b.phi_hat, z, self.g, ("alpha", None)
        h = grid.h
        for j in range(grid.n_steps):
            yield h, j + 1, b.sigma_left[:, j], z, z, z, ("own", j)
        wS = h / (self.N - 1)
        for j in range(grid.n_steps):
            yield wS, j + 1, z, z, self.pop.beta_own[:, j], z, ("S", j)

    @staticmethod
    def _u_column(pc: PlayerControl, idx):
        kind, j = idx
        if kind == "alpha":
            return pc.alpha
        return pc.own[:, j] if kind == "own" else pc.others[:, j]

    def _split(self, sol, e):
        n1 = self.grid.size
        x1, xo = sol[:n1], sol[n1:]
        m = x1 / self.N + self.rho * (xo + e[:, None] if sol.ndim == 2 else xo + e)
        return x1, m

    def response(self, pc: PlayerControl) -> _Response:
        grid, n1, n = self.grid, self.grid.size, self.grid.n_steps
        C = self.bundle.C
        out = {"alpha": [None, None], "own": [np.zeros((n1, n)), np.zeros((n1, n))],
               "S": [np.zeros((n1, n)), np.zeros((n1, n))]}
        for _, k0, s1, so, e, go, idx in self._components():
            u = self._u_column(pc, idx)
            rhs = self._rhs(k0, s1 + C @ u, so, e, go)
            sol = _solve(self._matrix(k0), rhs)
            x1, m = self._split(sol, e)
            kind, j = idx
            if kind == "alpha":
                out["alpha"] = [x1, m]
            else:
                out[kind][0][:, j] = x1
                out[kind][1][:, j] = m
        return _Response(out["alpha"][0], out["own"][0], out["S"][0],
                         out["alpha"][1], out["own"][1], out["S"][1])

    def cost(self, pc: PlayerControl, resp: _Response | None = None) -> float:
        resp = resp or self.response(pc)
        w, h = self.grid.weights, self.grid.h
        gm, R = self.model.gamma, self.model.R
        wS = h / (self.N - 1)
        y_a = resp.x_alpha - gm * resp.m_alpha - self.model.eta
        y_o = resp.x_own - gm * resp.m_own
        y_s = resp.x_S - gm * resp.m_S
        state = w @ y_a ** 2 + h * np.sum(w @ y_o ** 2) + wS * np.sum(w @ y_s ** 2)
        ctrl = w @ pc.alpha ** 2 + h * np.sum(w @ pc.own ** 2) + wS * np.sum(w @ pc.others ** 2)
        return float(state + R * ctrl)

    def mean_field_error(self, resp: _Response) -> float:
        w, h = self.grid.weights, self.grid.h
        wS = h / (self.N - 1)
        return float(w @ (resp.m_alpha - self.pop.a_hat) ** 2 + h * np.sum(w @ resp.m_own ** 2)
                     + wS * np.sum(w @ resp.m_S ** 2))

    def best_response(self) -> PlayerControl:
        """Exact minimizer of player 1's cost over adapted affine controls."""
        grid, n1, n = self.grid, self.grid.size, self.grid.n_steps
        w, R, gm, C = grid.weights, self.model.R, self.model.gamma, self.bundle.C
        alpha = np.zeros(n1)
        own, oth = np.zeros((n1, n)), np.zeros((n1, n))
        for _, k0, s1, so, e, go, idx in self._components():
            kind, j = idx
            free = np.arange(0 if kind == "alpha" else j + 1, n1)
            L = self._matrix(k0)
            base = self._rhs(k0, s1, so, e, go)
            dirs = np.vstack([C[:, free], np.zeros((n1, free.size))])
            sol = _solve(L, np.column_stack([base, dirs]))
            x1, m = self._split(sol[:, :1], e)
            y0 = (x1 - gm * m)[:, 0] - (self.model.eta if kind == "alpha" else 0.0)
            Y1, Yo = sol[:n1, 1:], sol[n1:, 1:]
            Yy = Y1 - gm * (Y1 / self.N + self.rho * Yo)
            H = Yy.T @ (w[:, None] * Yy) + R * np.diag(w[free])
            uf = np.linalg.solve(H, -Yy.T @ (w * y0))
            if kind == "alpha":
                alpha[free] = uf
            elif kind == "own":
                own[free, j] = uf
            else:
                oth[free, j] = uf
        return PlayerControl(grid, alpha, own, oth)


def _solve(L, rhs):
    try:
        sol = np.linalg.solve(L, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"deviation system is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise SingularSystemError("deviation system produced non-finite values")
    return sol


def equilibrium_control(pop: PopulationState) -> PlayerControl:
    return PlayerControl.from_affine(pop.control, pop.N)


def deviation_family(model: ModelSpec, pop: PopulationState, bundle: TransformBundle | None = None,
                     shift_steps: int | None = None) -> dict[str, PlayerControl]:
    """Deviations tested against the equilibrium control of player 1."""
    bundle = bundle or build_transforms(model)
    u_eq = equilibrium_control(pop)
    d = shift_steps if shift_steps is not None else max(1, pop.grid.n_steps // 16)
    lim = PlayerControl.from_affine(pop.limit_control, pop.N)
    return {
        "zero": PlayerControl(pop.grid, np.zeros(pop.grid.size)),
        "double": u_eq.scaled(2.0),
        "shifted": u_eq.delayed(d),
        "limit_best_response": lim,
        "best_response": _DeviationSystem(model, pop, bundle).best_response(),
    }


@dataclass(frozen=True)
class DeviationOutcome:
    cost: float
    penalty_exact: float
    penalty_mc: float
    penalty_se: float
    mf_error: float

    def respects(self, eps: float, n_se: float = 3.0) -> bool:
        """``penalty >= -eps`` up to ``n_se`` standard errors."""
        se = 0.0 if not np.isfinite(self.penalty_se) else self.penalty_se
        return self.penalty_mc >= -eps - n_se * se


@dataclass(frozen=True, eq=False)
class DeviationReport:
    N: int
    equilibrium_cost: float
    mf_baseline: float
    best_response_cost: float
    eps_exact: float
    outcomes: Mapping[str, DeviationOutcome] = field(default_factory=dict)
    paths: int = 0
    seed: int = 0

    def eps_fit(self, C: float) -> float:
        return C / math.sqrt(self.N)


def deviation_experiment(model: ModelSpec, a_hat: np.ndarray, N: int,
                         controls: Mapping[str, PlayerControl] | None, cfg: SimConfig,
                         bundle: TransformBundle | None = None) -> DeviationReport:
    """Player 1 deviates, everybody else keeps the decentralized control.

    Costs are computed exactly from the affine representation and estimated
    by Monte Carlo with common random numbers (the penalty is sampled as a
    per-path difference against the equilibrium control).
    """
    bundle = bundle or build_transforms(model)
    pop = solve_population(model, a_hat, N, bundle)
    sysm = _DeviationSystem(model, pop, bundle)
    controls = dict(deviation_family(model, pop, bundle) if controls is None else controls)
    u_eq = equilibrium_control(pop)
    r_eq = sysm.response(u_eq)
    J_eq = sysm.cost(u_eq, r_eq)
    br = controls.get("best_response") or sysm.best_response()
    J_br = sysm.cost(br)
    names = list(controls)
    resp = {k: sysm.response(v) for k, v in controls.items()}
    grid, w = pop.grid, pop.grid.weights
    gm, eta, R = model.gamma, model.eta, model.R
    cfg = cfg.with_N(N)

    def run(batch: range):
        dW = _draw(cfg, grid, batch)
        d1 = dW[:, 0, :]
        S = _average(dW[:, 1:, :]) if N > 2 else dW[:, 1, :]

        def path_cost(pc, r):
            x = r.x_alpha + d1 @ r.x_own.T + S @ r.x_S.T
            m = r.m_alpha + d1 @ r.m_own.T + S @ r.m_S.T
            u = pc.alpha + d1 @ pc.own.T + S @ pc.others.T
            return ((x - gm * m - eta) ** 2 + R * u ** 2) @ w

        base = path_cost(u_eq, r_eq)
        return np.stack([path_cost(controls[k], resp[k]) - base for k in names], axis=1)

    bs = max(1, min(cfg.batch_size, 65536 // N))
    diffs = np.concatenate(ordered_map(run, path_batches(cfg.paths, bs), resolve_threads(cfg.threads)))
    outcomes = {}
    for i, k in enumerate(names):
        Jk = sysm.cost(controls[k], resp[k])
        outcomes[k] = DeviationOutcome(
            cost=Jk, penalty_exact=Jk - J_eq,
            penalty_mc=float(diffs[:, i].mean()),
            penalty_se=batch_means_stderr(diffs[:, i], cfg.n_batches),
            mf_error=sysm.mean_field_error(resp[k]),
        )
    return DeviationReport(
        N=int(N), equilibrium_cost=J_eq, mf_baseline=sysm.mean_field_error(r_eq),
        best_response_cost=J_br, eps_exact=J_eq - J_br, outcomes=outcomes,
        paths=cfg.paths, seed=cfg.seed,
    )
