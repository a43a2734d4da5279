"""Command-line entry point: ``volterra-mfg {check,nce,rates,convert,nash} --config run.toml``.

Exit codes: 0 success, 1 bad configuration or precondition, 2 a sufficient
condition fails (``check`` only), 3 solver failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .delay_models import DelayControlModel, DelayStateModel
from .errors import InvalidArgumentError, VolterraMFGError
from .nce import ConditionWarning, check_conditions, solve_nce
from .population_sim import (
    SimConfig,
    deviation_experiment,
    deviation_family,
    monte_carlo_costs,
    rate_experiment,
    solve_population,
)
from .report import fmt, plot_mean_path, plot_rates, run_metadata, write_csv, write_json
from .rng import resolve_threads
from .transforms import build_transforms

log = logging.getLogger("volterra_mfg")

EXIT_OK, EXIT_USAGE, EXIT_CONDITION, EXIT_SOLVER = 0, 1, 2, 3


class _Run:
    def __init__(self, args, cfg: RunConfig, command: str):
        self.args, self.cfg, self.command = args, cfg, command
        out = args.out or cfg.output.directory or "out"
        self.out = Path(out)
        self.seed = args.seed if args.seed is not None else cfg.experiment.seed
        self.threads = resolve_threads(args.threads)
        self.figures = args.figures or cfg.output.figures

    def meta(self, seeded: bool = False) -> dict:
        return run_metadata(self.cfg.sha256, self.seed if seeded else None, self.command)

    def csv(self, name, header, rows):
        if "csv" in self.cfg.output.formats:
            write_csv(self.out / name, header, rows)

    def json(self, name, obj):
        if "json" in self.cfg.output.formats:
            write_json(self.out / name, obj)

    def sim(self, N: int) -> SimConfig:
        e = self.cfg.experiment
        return SimConfig(N=N, paths=e.paths, seed=self.seed, batch_size=e.batch_size, threads=self.threads)


def _fit_dict(fit):
    if fit is None:
        return None
    return {"slope": fit.slope, "stderr": fit.stderr, "ci95": [fit.ci_low, fit.ci_high], "intercept": fit.intercept}


def cmd_check(run: _Run) -> int:
    model = run.cfg.model
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditionWarning)
        rep = check_conditions(model, run.cfg.experiment.check_N)
    rows = rep.rows()
    for name, value, thr, ok in rows:
        print(f"{name:16s} {fmt(value):>24s} < {fmt(thr):<24s} {'PASS' if ok else 'FAIL'}")
    run.csv("conditions.csv", ["condition", "value", "threshold", "passed"], rows)
    run.json("conditions.json", {
        "metadata": run.meta(),
        "N": rep.N,
        "conditions": {n: {"value": v, "threshold": t, "passed": ok} for n, v, t, ok in rows},
        "constants": {"L": rep.L, "K1": rep.K1, "K2": rep.K2},
        "all_pass": rep.passes,
    })
    return EXIT_OK if rep.passes else EXIT_CONDITION


def cmd_nce(run: _Run) -> int:
    model = run.cfg.model
    bundle = build_transforms(model)
    sol = solve_nce(model, mode=run.cfg.experiment.solver_mode, bundle=bundle)
    t = bundle.grid.nodes
    run.csv("nce.csv", ["t", "a_hat"], zip(t, sol.a_hat))
    run.csv("transforms.csv", ["t", "phi_hat", "phi_tilde"], zip(t, bundle.phi_hat, bundle.phi_tilde))
    run.json("nce.json", {
        "metadata": run.meta(),
        "route": sol.route,
        "mode": run.cfg.experiment.solver_mode,
        "residual_sup": sol.residual_sup,
        "tol": model.tol,
        "contraction_margin": sol.report.contraction_margin if sol.report else None,
        "within_contraction": sol.report.within_contraction if sol.report else None,
        "t": t, "a_hat": sol.a_hat,
    })
    if run.figures:
        plot_mean_path(run.out / "nce.png", t, sol.a_hat, bundle.phi_hat)
    print(f"route {sol.route}, residual {fmt(sol.residual_sup)}, wrote {run.out}")
    return EXIT_OK


def cmd_rates(run: _Run) -> int:
    e = run.cfg.experiment
    if len(e.Ns) < 2 or any(n < 2 for n in e.Ns):
        raise InvalidArgumentError(f"rates needs at least two population sizes >= 2, got {list(e.Ns)}")
    rep = rate_experiment(run.cfg.model, e.Ns, run.sim(e.Ns[0]))
    header = ["N", "mf_error", "mf_stderr", "cost_gap", "gap_stderr", "cost_gap_exact",
              "mf_error_mc", "mf_error_mc_stderr", "player_cost", "player_cost_stderr",
              "eps_a", "eps_b", "log_N", "log_mf_error", "log_abs_cost_gap"]

    def lg(x):
        return math.log(abs(x)) if x != 0 else float("-inf")

    rows = [
        [N, rep.mf_error[i], rep.mf_stderr[i], rep.cost_gap[i], rep.gap_stderr[i], rep.cost_gap_exact[i],
         rep.mf_error_mc[i], rep.mf_error_mc_se[i], rep.player_cost[i], rep.player_cost_se[i],
         rep.eps_a[i], rep.eps_b[i], math.log(N), lg(rep.mf_error[i]), lg(rep.cost_gap[i])]
        for i, N in enumerate(rep.Ns)
    ]
    run.csv("rates.csv", header, rows)
    summary = {
        "metadata": run.meta(seeded=True),
        "Ns": list(rep.Ns), "paths": rep.paths,
        "mf_slope": _fit_dict(rep.mf_fit), "gap_slope": _fit_dict(rep.gap_fit),
        "gap_exact_slope": _fit_dict(rep.gap_exact_fit),
        "mf_rate_degenerate": rep.mf_degenerate, "gap_rate_degenerate": rep.gap_degenerate,
        "gap_constant": rep.gap_constant, "limit_cost": rep.limit_cost,
        "gap_within_bound": [bool(abs(rep.cost_gap[i]) <= rep.gap_bound(N) + 3 * rep.gap_stderr[i])
                             for i, N in enumerate(rep.Ns)],
    }
    run.json("rates.json", summary)
    if run.figures:
        plot_rates(run.out / "rates.png", rep.Ns, rep.mf_error, rep.cost_gap, rep.gap_stderr, rep.mf_fit, rep.gap_fit)
    ms = "degenerate" if rep.mf_fit is None else f"{rep.mf_fit.slope:.4f}"
    gs = "degenerate" if rep.gap_fit is None else f"{rep.gap_fit.slope:.4f}"
    print(f"mf_slope {ms}, gap_slope {gs}, wrote {run.out}")
    return EXIT_OK


def cmd_convert(run: _Run) -> int:
    dm = run.cfg.delay_model
    if not isinstance(dm, (DelayStateModel, DelayControlModel)):
        raise InvalidArgumentError("convert needs a 'state-delay' or 'control-delay' preset")
    bundle = build_transforms(run.cfg.model)
    t = bundle.grid.nodes
    n1 = t.size
    c, s = bundle.c.values, bundle.sigma.values
    pairs = [(i, j) for i in range(n1) for j in range(i + 1)]
    run.csv("kernel_c.csv", ["t", "s", "c"], ((t[i], t[j], c[i, j]) for i, j in pairs))
    run.csv("kernel_sigma.csv", ["t", "s", "sigma"], ((t[i], t[j], s[i, j]) for i, j in pairs))
    run.csv("phi.csv", ["t", "phi"], zip(t, bundle.phi))
    run.json("convert.json", {"metadata": run.meta(), "preset": run.cfg.preset, "delay": dm.h,
                              "n_steps": bundle.grid.n_steps, "T": bundle.grid.T})
    print(f"converted {run.cfg.preset} model, wrote {run.out}")
    return EXIT_OK


def cmd_nash(run: _Run) -> int:
    e = run.cfg.experiment
    model = run.cfg.model
    bundle = build_transforms(model)
    a_hat = solve_nce(model, bundle=bundle).a_hat
    N0 = e.Ns[0]
    pop0 = solve_population(model, a_hat, N0, bundle)
    gap0 = monte_carlo_costs(pop0, model, run.sim(N0))
    C = abs(gap0.gap) * math.sqrt(N0)
    rows, eps_exact = [], {}
    for N in e.Ns:
        pop = solve_population(model, a_hat, N, bundle)
        fam = deviation_family(model, pop, bundle, e.shift_steps)
        fam = {k: fam[k] for k in e.deviations}
        rep = deviation_experiment(model, a_hat, N, fam, run.sim(N), bundle)
        eps_fit = C / math.sqrt(N)
        eps_exact[N] = rep.eps_exact
        for name, o in rep.outcomes.items():
            rows.append([N, name, o.cost, o.penalty_exact, o.penalty_mc, o.penalty_se, o.mf_error,
                         rep.mf_baseline, rep.eps_exact, eps_fit, o.respects(eps_fit)])
    run.csv("nash.csv", ["N", "deviation", "cost", "penalty_exact", "penalty_mc", "penalty_stderr",
                         "mf_error", "mf_error_baseline", "eps_exact", "eps_fit", "respects_eps"], rows)
    run.json("nash.json", {
        "metadata": run.meta(seeded=True), "Ns": list(e.Ns), "paths": e.paths, "gap_constant": C,
        "eps_exact": {str(k): v for k, v in eps_exact.items()},
        "all_respect_eps": all(r[-1] for r in rows),
    })
    print(f"{len(rows)} deviation rows, all respect eps: {all(r[-1] for r in rows)}, wrote {run.out}")
    return EXIT_OK


COMMANDS = {"check": cmd_check, "nce": cmd_nce, "rates": cmd_rates, "convert": cmd_convert, "nash": cmd_nash}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="volterra-mfg", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "check": "evaluate the sufficient conditions and report margins",
        "nce": "solve the consistency equation and write the mean path",
        "rates": "mean-field error and cost gap across population sizes",
        "convert": "write the Volterra kernels of a delay model",
        "nash": "unilateral deviation experiment",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--config", required=True, help="TOML run configuration")
        sp.add_argument("--out", help="output directory (overrides [output].directory)")
        sp.add_argument("--seed", type=int, help="64-bit seed (overrides [experiment].seed)")
        sp.add_argument("--threads", type=int, help="worker threads (default: $VOLTERRA_MFG_THREADS or 1)")
        sp.add_argument("--figures", action="store_true", help="also render PNG figures (needs matplotlib)")
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and not 0 <= args.seed < (1 << 64):
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        run = _Run(args, cfg, args.command)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](run)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ImportError as exc:
        print(f"error: figures need matplotlib ({exc})", file=sys.stderr)
        return EXIT_USAGE
    except VolterraMFGError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except np.linalg.LinAlgError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
