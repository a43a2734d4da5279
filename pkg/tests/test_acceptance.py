"""Acceptance criteria, each at its stated tolerance; results are printed in the session summary."""

import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from oracles import direct_delay_nce, em_state_delay
from volterra_mfg.cli import main
from volterra_mfg.closed_loop import (
    AffineState,
    control_kernel,
    limit_cost,
    limit_optimal_state,
    open_loop_state,
    svf_residual,
    svf_solve,
)
from volterra_mfg.config import load_config
from volterra_mfg.delay_models import (
    DelayControlModel,
    DelayStateModel,
    delay_control_to_volterra,
    delay_state_to_volterra,
    phi1_solve,
    state_delay_forcing,
)
from volterra_mfg.fredholm import FredholmProblem, fredholm_solve, gamma_apply
from volterra_mfg.grid_kernels import make_uniform_grid, sample_kernel, volterra_resolvent
from volterra_mfg.nce import cond62_integral, solve_nce
from volterra_mfg.population_sim import (
    SimConfig,
    deviation_experiment,
    fit_loglog,
    mean_field_error,
    monte_carlo_costs,
    solve_population,
)
from volterra_mfg.transforms import ModelSpec, build_transforms

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
PATHS = 10_000


def _exp_kernel(grid, scale, rate):
    t, s = np.meshgrid(grid.nodes, grid.nodes, indexing="ij")
    return np.where(t >= s, scale * np.exp(rate * (t - s)), 0.0)


def test_criterion_01_resolvent_oracle():
    lines, ok = [], True
    for b in (-1.0, 0.5, 2.0):
        errs = []
        for n in (64, 128):
            g = make_uniform_grid(1.0, n)
            t0 = time.perf_counter()
            P = volterra_resolvent(sample_kernel(b, g)).kernel.values
            elapsed = time.perf_counter() - t0
            errs.append(np.max(np.abs(P - _exp_kernel(g, b, b))))
        ratio = errs[0] / errs[1]
        good = errs[1] <= 5e-3 and 3.5 <= ratio <= 4.5 and elapsed < 1.0
        ok &= good
        lines.append(f"b={b:g} err={errs[1]:.2e} ratio={ratio:.2f} t={elapsed:.3f}s")
    record(1, "resolvent vs b e^{b(t-s)}", ok, "; ".join(lines))
    assert ok


def test_criterion_02_transform_oracle():
    lines, ok = [], True
    for b in (-1.0, 0.5, 2.0):
        errs = []
        for n in (64, 128):
            bundle = build_transforms(ModelSpec(b=b, c=1.5, n_steps=n))
            errs.append(np.max(np.abs(bundle.c_hat.values - _exp_kernel(bundle.grid, 1.5, b))))
        ratio = errs[0] / errs[1]
        good = errs[1] <= 5e-3 and 3.5 <= ratio <= 4.5
        ok &= good
        lines.append(f"b={b:g} err={errs[1]:.2e} ratio={ratio:.2f}")
    bundle = build_transforms(ModelSpec(b=0.0, c=lambda t, s: np.cos(t - 2 * s), n_steps=128))
    exact = bool(np.array_equal(bundle.c_hat.values, bundle.c.values))
    ok &= exact
    record(2, "c_hat vs c e^{int b}", ok, "; ".join(lines) + f"; b=0 bit-exact={exact}")
    assert ok


def test_criterion_03_fredholm_solver():
    g = make_uniform_grid(1.0, 128)
    p = FredholmProblem(sample_kernel(1.0, g, "full"), np.ones(g.size), 2.0)
    tol = 1e-10
    direct = fredholm_solve(p, tol=tol)
    err = float(np.max(np.abs(direct.solution - 2.0)))
    picard = fredholm_solve(p, mode="picard", tol=tol)
    diff = float(np.max(np.abs(picard.solution - direct.solution)))
    ok = err <= 1e-10 and direct.contraction_margin < 1 and diff <= 10 * tol
    record(3, "Fredholm A=1, R=2", ok, f"direct err={err:.1e}, picard diff={diff:.1e}, margin={direct.contraction_margin:.2f}")
    assert ok


def _nce_instances():
    out = {
        "lq": ModelSpec(phi=1.0, c=1.0, R=10.0, n_steps=64),
        "noisy-lq": ModelSpec(phi=1.0, c=1.0, sigma=1.0, R=10.0, gamma=0.3, eta=0.1, n_steps=64),
        "coupled-smooth": ModelSpec(phi=1.0, b=0.3, f=lambda t, s: 0.3 * np.cos(t - s), c=1.0, sigma=1.0,
                                    R=2.0, gamma=0.5, eta=0.2, n_steps=64),
        "kernel-c": ModelSpec(phi=np.cos, b=lambda t, s: -0.5 * (t - s), f=0.2, c=lambda t, s: 1.0 + t * s,
                              sigma=0.5, R=1.5, gamma=-0.4, eta=0.3, n_steps=64),
    }
    for name in ("sde", "coupled", "state_delay", "control_delay"):
        out[name] = load_config(CONFIGS / f"{name}.toml").model
    return out


def test_criterion_04_nce_fixed_point():
    worst_fp, worst_route, ok = 0.0, 0.0, True
    for name, m in _nce_instances().items():
        bundle = build_transforms(m)
        tol = m.tol
        a = solve_nce(m, bundle=bundle).a_hat
        fp = float(np.max(np.abs(gamma_apply(bundle, a, m.gamma, m.eta, m.R) - a)))
        b = solve_nce(m, route="volterra-fredholm", bundle=bundle).a_hat
        route = float(np.max(np.abs(a - b)))
        ok &= fp <= 10 * tol and route <= 10 * tol
        worst_fp, worst_route = max(worst_fp, fp / tol), max(worst_route, route / tol)
    collapse = True
    for name in ("lq", "noisy-lq", "sde"):
        m = _nce_instances()[name].replace(gamma=1.0, eta=0.0, f=0.0)
        bundle = build_transforms(m)
        collapse &= bool(np.array_equal(solve_nce(m, bundle=bundle).a_hat, bundle.phi_hat))
    ok &= collapse
    record(4, "NCE fixed point", ok,
           f"max |Gamma a - a|/tol={worst_fp:.2e}, max route diff/tol={worst_route:.2e}, collapse exact={collapse}")
    assert ok


def _svf_instance(seed, n=64):
    rng = np.random.default_rng(seed)
    g = make_uniform_grid(1.0, n)
    a0, a1, p, q = rng.uniform(-0.5, 0.5, 4)
    A = sample_kernel(lambda t, s: a0 + a1 * np.cos(t - s), g)
    B = sample_kernel(lambda t, s: 0.5 + abs(p) + q * s * t, g)
    forcing = AffineState(g, rng.standard_normal(g.size), np.tril(rng.standard_normal((g.size, n)), -1) * 0.3,
                          np.tril(rng.standard_normal((g.size, n)), -1) * 0.3, 4)
    # smallest R of the form 2^k that satisfies the smallness condition
    v = cond62_integral(A, B)
    R = 0.5
    while not v < R ** 2 / 3:
        R *= 2.0
    return A, B, forcing, R


def test_criterion_05_svf_exactness():
    ok, worst_res, worst_ratio, worst_t = True, 0.0, 0.0, 0.0
    for seed in range(20):
        A, B, forcing, R = _svf_instance(seed)
        t0 = time.perf_counter()
        x = svf_solve(A, B, forcing, R)
        elapsed = time.perf_counter() - t0
        d = x.diagnostics
        scale = max(1.0, np.abs(x.alpha).max(), np.abs(x.beta_own).max(), np.abs(x.beta_avg).max())
        res = svf_residual(A, B, forcing, x, R) / scale
        ok &= bool(d["cond62_holds"] and d["bound_holds"]) and res <= 1e-12 and elapsed < 10.0
        worst_res = max(worst_res, res)
        worst_ratio = max(worst_ratio, d["bound_lhs"] / d["bound_rhs"])
        worst_t = max(worst_t, elapsed)
    record(5, "stochastic Volterra-Fredholm solve", ok,
           f"20 instances, max rel residual={worst_res:.1e}, max E|x|^2/(6 E|phi|^2)={worst_ratio:.3f}, "
           f"max time={worst_t:.2f}s")
    assert ok


def test_criterion_06_limit_optimality(coupled_model):
    m = coupled_model
    a = solve_nce(m).a_hat
    x = limit_optimal_state(m, a)
    u = control_kernel(m, a).apply(x)
    J0 = limit_cost(m, x, u, a)
    g = m.grid
    rng = np.random.default_rng(2026)
    epss = (1e-1, 1e-2, 1e-3)
    ok, slopes, min_inc = True, [], np.inf
    for _ in range(5):
        v = AffineState(g, rng.standard_normal(g.size), np.tril(rng.standard_normal((g.size, g.n_steps)), -1))
        incs = []
        for eps in epss:
            ue = u + v.scaled(eps)
            incs.append(limit_cost(m, open_loop_state(m, a, ue), ue, a) - J0)
        min_inc = min(min_inc, min(incs))
        slope = float(np.polyfit(np.log(epss), np.log(np.maximum(incs, 1e-300)), 1)[0])
        slopes.append(slope)
        ok &= min(incs) >= -1e-12 and abs(slope - 2.0) <= 0.1
    record(6, "limit-problem optimality", ok,
           f"min increment={min_inc:.2e}, slopes={', '.join(f'{s:.3f}' for s in slopes)}")
    assert ok


def test_criterion_07_mean_field_rate():
    m = load_config(CONFIGS / "sde.toml").model
    t0 = time.perf_counter()
    a = solve_nce(m).a_hat
    Ns = (4, 16, 64, 256)
    mf = [mean_field_error(solve_population(m, a, N)) for N in Ns]
    fit = fit_loglog(Ns, mf)
    elapsed = time.perf_counter() - t0
    ok = fit is not None and abs(fit.slope + 1.0) <= 0.02 and elapsed < 30.0
    record(7, "mean-field error O(1/N)", ok, f"mf_slope={fit.slope:.4f}, time={elapsed:.1f}s")
    assert ok


@pytest.mark.parametrize("config", ["coupled", "sde"])
def test_criterion_08_cost_gap(config):
    cfg = load_config(CONFIGS / f"{config}.toml")
    m = cfg.model
    t0 = time.perf_counter()
    bundle = build_transforms(m)
    a = solve_nce(m, bundle=bundle).a_hat
    seed = cfg.experiment.seed
    gaps = {}
    for N in (4, 16, 64, 256):
        est = monte_carlo_costs(solve_population(m, a, N, bundle), m, SimConfig(N=N, paths=PATHS, seed=seed))
        gaps[N] = (est.gap, est.gap_se)
    C = abs(gaps[4][0]) * 2.0
    ok = True
    parts = [f"C={C:.4f}"]
    for N in (16, 64, 256):
        g, se = gaps[N]
        bound = C / np.sqrt(N)
        ok &= g <= bound + 3 * se and abs(g) <= bound + 3 * se
        parts.append(f"N={N} gap={g:+.2e}+-{se:.1e} <= {bound:.2e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300.0
    key = "8" if config == "coupled" else "8b"
    record(key, f"cost gap O(1/sqrt N), {config} config", ok, ", ".join(parts) + f", time={elapsed:.0f}s")
    assert ok


def test_criterion_09_epsilon_nash():
    cfg = load_config(CONFIGS / "coupled.toml")
    m = cfg.model
    bundle = build_transforms(m)
    a = solve_nce(m, bundle=bundle).a_hat
    ok, eps, worst = True, {}, np.inf
    for N in (4, 16, 64, 256):
        rep = deviation_experiment(m, a, N, None, SimConfig(N=N, paths=PATHS, seed=cfg.experiment.seed), bundle)
        e = rep.eps_exact
        eps[N] = e
        for name in ("zero", "double", "shifted", "best_response"):
            o = rep.outcomes[name]
            ok &= o.penalty_exact >= -e - 1e-14 and o.penalty_mc >= -e - 3 * o.penalty_se
            worst = min(worst, (o.penalty_mc + e) / max(o.penalty_se, 1e-300))
    ok &= eps[256] <= eps[4] / 4
    record(9, "epsilon-Nash", ok,
           "eps=" + ", ".join(f"{N}:{v:.2e}" for N, v in eps.items())
           + f", eps(256)/eps(4)={eps[256] / eps[4]:.4f}, min (penalty_mc+eps)/se={worst:.2f}")
    assert ok


def test_criterion_10_delay_reduction():
    A, D, h = -0.5, 0.5, 0.25
    B = lambda t, s: 0.8 * np.asarray(t, float) + 0.0 * np.asarray(s, float)  # noqa: E731
    k = lambda s: 1.0 + np.asarray(s, float)  # noqa: E731
    n = 64
    g = make_uniform_grid(1.0, n)
    dm = DelayStateModel(A=A, B=B, C=1.0, D=D, h=h, k=k)
    X = em_state_delay(lambda t: A, B, lambda t: D, k, h, 1.0, n, 8, PATHS, 12345)
    spec = delay_state_to_volterra(dm, g, R=1.0, gamma=0.5, eta=0.2)
    Phi = phi1_solve(dm, g).Phi.values
    mean = build_transforms(spec).phi
    # covariance of int_0^t Phi(t,r) D dW(r): trapezoid over [0, t ^ s]
    om = g.causal_weights
    idx = np.minimum.outer(np.arange(g.size), np.arange(g.size))
    cov = np.einsum("ilr,ir,lr->il", om[idx], Phi, Phi) * D ** 2
    P = X.shape[0]
    m_hat = X.mean(axis=0)
    z_mean = np.abs(m_hat - mean)[1:] / (X[:, 1:].std(axis=0, ddof=1) / np.sqrt(P))
    Y = X - m_hat
    z_cov = np.zeros((g.size - 1, g.size - 1))
    for i in range(1, g.size):
        prod = Y[:, i:i + 1] * Y[:, 1:]
        z_cov[i - 1] = np.abs(prod.mean(axis=0) - cov[i, 1:]) / (prod.std(axis=0, ddof=1) / np.sqrt(P))
    ok_em = bool(m_hat[0] == mean[0] and z_mean.max() <= 3 and z_cov.max() <= 3)

    a = solve_nce(spec).a_hat
    psi = state_delay_forcing(dm, g, Phi)
    ref_s = direct_delay_nce(lambda i, r: Phi[i, r], psi, g, 1.0, 0.5, 0.2)
    err_s = float(np.max(np.abs(a - ref_s)))

    Ac = -0.3
    cm = DelayControlModel(A=Ac, C=1.0, D=0.5, h=h, k=1.0)
    a_c = solve_nce(delay_control_to_volterra(cm, g, R=1.0, gamma=0.5, eta=0.1)).a_hat
    t = g.nodes

    def kern(i, r):
        s = t[r] + h
        return np.exp(Ac * (t[i] - s)) if s <= t[i] + 1e-12 else 0.0

    ref_c = direct_delay_nce(kern, np.exp(Ac * t), g, 1.0, 0.5, 0.1)
    err_c = float(np.max(np.abs(a_c - ref_c)))
    ok = ok_em and err_s <= 1e-8 and err_c <= 1e-8
    record(10, "delay reduction", ok,
           f"EM max z mean={z_mean.max():.2f}, cov={z_cov.max():.2f} ({(z_cov > 3).sum()} of {z_cov.size} > 3); "
           f"state-delay NCE diff={err_s:.1e}, control-delay NCE diff={err_c:.1e}")
    assert ok


def test_criterion_11_reproducibility(tmp_path):
    small = tmp_path / "coupled_small.toml"
    small.write_text((CONFIGS / "coupled.toml").read_text().replace("paths = 10000", "paths = 1000"))
    runs = [("check", CONFIGS / "sde.toml"), ("nce", CONFIGS / "coupled.toml"),
            ("convert", CONFIGS / "state_delay.toml"), ("convert", CONFIGS / "control_delay.toml"),
            ("rates", small), ("nash", small)]
    ok, files = True, 0
    for i, (cmd, cfg) in enumerate(runs):
        snaps = []
        for rep in ("a", "b"):
            out = tmp_path / f"{i}{rep}"
            extra = ["--figures"] if cmd in ("nce", "rates") else []
            assert main([cmd, "--config", str(cfg), "--out", str(out), *extra]) == 0
            snaps.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        ok &= snaps[0] == snaps[1]
        files += len(snaps[0])
    record(11, "byte-identical reruns", ok, f"{len(runs)} commands, {files} files compared")
    assert ok
