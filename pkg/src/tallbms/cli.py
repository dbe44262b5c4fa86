"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every subcommand accepts ``--config FILE`` whose keys provide defaults for
the long options (``fraction = 0.01`` sets ``--fraction``), ``--seed`` and
``--out DIR``.
"""

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from tallbms.config import read_config
from tallbms.evidence import EvidenceSpec, Evaluator
from tallbms.glm import Family
from tallbms.harness import (
    TABLE1,
    Example1Spec,
    LoadError,
    RunReport,
    benchmark_optimizers,
    gen_example1,
    load_csv,
    read_matrix_csv,
    rmse,
    worker_count,
    write_csv,
    write_rows,
)
from tallbms.mjmcmc import KernelMix, run_chains, trace_to_text
from tallbms.optim import (
    BSGD_SCHEDULE,
    SirlsConfig,
    SirlsSgdConfig,
    StepSchedule,
    bsgd,
    gd,
    irls,
    s_irls,
    subsample_size,
)
from tallbms.posterior import (
    enumerate_log_evidence,
    estimates_from_log_evidence,
    mc_estimates,
    rm_estimates,
)
from tallbms.space import ModelPrior, model_columns, model_hex
from tallbms.submcmc import Algo3Config, run_algo3

ESTIMATE_FIELDS = ("model_hex", "log_evidence", "visits", "rm_prob", "mc_prob")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", type=Path, help="key = value file supplying option defaults")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."))


def _data_args(p):
    p.add_argument("--data", type=Path, required=True, help="CSV with a header row")
    p.add_argument("--response", default="y")
    p.add_argument("--family", default="gaussian")
    p.add_argument("--columns", help="comma-separated covariate columns (default: all others)")


def _evidence_args(p, default="bic"):
    p.add_argument("--evidence", choices=("bic", "laplace", "gprior", "aic"), default=default)
    p.add_argument("--g", type=float)
    p.add_argument("--prior-precision", type=float, default=0.0)
    p.add_argument("--q", type=float, default=0.5, help="prior inclusion probability")


def _subsample_args(p, fraction=0.01):
    p.add_argument("--fraction", type=float, default=fraction, help="subsample share of n")
    p.add_argument("--n-init", type=int, help="S-IRLS iterations (family default if omitted)")
    p.add_argument("--sgd-iters", type=int, help="BSGD iterations (family default if omitted)")


def _mix_args(p):
    p.add_argument("--mode-jump-prob", type=float, default=0.05)
    p.add_argument("--rho", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tallbms", description="Bayesian model selection for tall GLM data")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="simulate the correlated 15-covariate example")
    _common(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--correlation", type=Path, help="CSV correlation matrix with header")
    p.add_argument("--target", choices=("gaussian", "logistic", "both"), default="both")

    p = sub.add_parser("fit", help="fit one model and report JSON")
    _common(p)
    _data_args(p)
    p.add_argument("--model", default="all", help="hex bitmask of included covariates, or 'all'")
    p.add_argument("--optimizer", choices=("irls", "gd", "bsgd", "s-irls", "s-irls-sgd"),
                   default="irls")
    _subsample_args(p)
    p.add_argument("--iterations", type=int, default=1000)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--decay", type=float)

    p = sub.add_parser("enumerate", help="evaluate every model")
    _common(p)
    _data_args(p)
    _evidence_args(p)
    p.add_argument("--fitter", choices=("irls", "s-irls-sgd"), default="irls")
    _subsample_args(p)
    p.add_argument("--allow-large", action="store_true")

    p = sub.add_parser("mjmcmc", help="mode-jumping MCMC with exact evidence")
    _common(p)
    _data_args(p)
    _evidence_args(p)
    _mix_args(p)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--chains", type=int, default=1)

    p = sub.add_parser("submcmc", help="MCMC with subsampled-fit evidence")
    _common(p)
    _data_args(p)
    _evidence_args(p)
    _mix_args(p)
    _subsample_args(p)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--p-rand", type=float, default=0.01)
    p.add_argument("--sigma-rand", type=float, default=0.01)
    p.add_argument("--restart", choices=("fresh", "warm"), default="fresh")
    p.add_argument("--block", type=int, default=1000)
    p.add_argument("--truth", type=Path, help="inclusion CSV to compute RMSE curves against")

    p = sub.add_parser("benchmark", help="deviance error and time of the optimizer grid")
    _common(p)
    _data_args(p)
    p.add_argument("--models", type=Path, help="file with one hex model per line")
    p.add_argument("--top", type=int, default=128, help="otherwise take the top models by BIC")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--optimizers", help="comma-separated subset of optimizer names")

    p = sub.add_parser("rmse", help="per-covariate RMSE of inclusion estimates")
    _common(p)
    p.add_argument("--estimates", type=Path, nargs="+", required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--column", default="probability")
    return ap


def parse_args(argv):
    ap = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config is not None:
        values = read_config(known.config)
        # Only keys known to the chosen subcommand are accepted.
        cmd = next((a for a in argv if not a.startswith("-")), None)
        sub = ap._subparsers._group_actions[0].choices.get(cmd) if cmd else None
        if sub is None:
            raise UsageError("a subcommand is required")
        dests = {a.dest: a for a in sub._actions}
        unknown = sorted(set(values) - set(dests) - {"config"})
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
        defaults = {}
        for key, text in values.items():
            action = dests[key]
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = text.lower() in ("1", "true", "yes", "on")
            elif action.nargs in ("+", "*"):
                defaults[key] = [action.type(t) if action.type else t for t in text.split()]
            else:
                defaults[key] = text
            if action.required:
                action.required = False
        sub.set_defaults(**defaults)
    return ap.parse_args(argv)


def _load(args):
    cols = [c.strip() for c in args.columns.split(",")] if args.columns else None
    return load_csv(args.data, args.response, Family.parse(args.family), cols)


def _evidence(args) -> EvidenceSpec:
    return EvidenceSpec(args.evidence, args.g, args.prior_precision)


def _sgd_config(args, data) -> SirlsSgdConfig:
    over = {"fraction": args.fraction}
    if args.n_init is not None:
        over["n_init"] = args.n_init
    if args.sgd_iters is not None:
        over["sgd_iters"] = args.sgd_iters
    return SirlsSgdConfig.for_family(data.family, **over)


def _parse_model(text: str, p: int) -> int:
    if text == "all":
        return (1 << p) - 1
    try:
        model = int(text, 16)
    except ValueError:
        raise UsageError(f"model must be a hex bitmask, got {text!r}") from None
    if not 0 <= model < 1 << p:
        raise UsageError(f"model {text} uses covariates beyond p = {p}")
    return model


def _json(path: Path, obj):
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, Path):
            return str(o)
        raise TypeError(type(o))
    path.write_text(json.dumps(obj, indent=2, default=default, allow_nan=True) + "\n")


def _write_inclusion(path: Path, names, columns: dict):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["covariate", "name"] + list(columns))
        for j, name in enumerate(names):
            w.writerow([j + 1, name] + [f"{columns[c][j]:.17g}" for c in columns])


def read_inclusion(path: Path, column: str = "probability") -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise LoadError(f"{path}: no rows")
    if column not in rows[0]:
        raise LoadError(f"{path}: no column {column!r}")
    try:
        return np.array([float(r[column]) for r in rows])
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None


def _write_estimates(path: Path, p: int, rows):
    """rows: (model, log_evidence, visits, rm_prob, mc_prob); None leaves a cell empty."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_FIELDS)
        for model, le, visits, rm, mc in rows:
            w.writerow([model_hex(model, p), f"{le:.17g}", "" if visits is None else visits,
                        "" if rm is None else f"{rm:.17g}", "" if mc is None else f"{mc:.17g}"])


def _names(data):
    return list(data.names) or [f"x{j + 1}" for j in range(data.p)]


def cmd_gen_data(args):
    corr = read_matrix_csv(args.correlation) if args.correlation else None
    spec = Example1Spec(n=args.n, seed=args.seed, correlation=corr, target=args.target)
    out = gen_example1(spec)
    sets = {"gaussian": out} if args.target == "gaussian" else \
        {"logistic": out} if args.target == "logistic" else {"gaussian": out[0], "logistic": out[1]}
    for name, data in sets.items():
        write_csv(data, args.out / f"example1_{name}.csv")


def cmd_fit(args):
    data = _load(args)
    model = _parse_model(args.model, data.p)
    sub = data.columns(model_columns(model, data.p))
    rng = np.random.default_rng(args.seed)
    b = subsample_size(sub.n, args.fraction)
    t0 = time.perf_counter()
    if args.optimizer == "irls":
        res = irls(sub)
    elif args.optimizer == "gd":
        sched = StepSchedule(args.alpha0 or 1.0, args.decay or 1.0)
        res = gd(sub, np.zeros(sub.m), sched, max_iter=args.iterations)
    elif args.optimizer == "bsgd":
        sched = StepSchedule(args.alpha0 or BSGD_SCHEDULE.alpha0, args.decay or BSGD_SCHEDULE.decay)
        res = bsgd(sub, rng.standard_normal(sub.m), b, sched, args.iterations, rng)
    elif args.optimizer == "s-irls":
        res = s_irls(sub, SirlsConfig(n_s=b, T=args.n_init or 75), rng, model=model)
    else:
        res = _sgd_config(args, data).run(sub, rng, model=model, keep_trace=True)
    seconds = time.perf_counter() - t0
    _json(args.out / "fit.json", dict(
        model_hex=model_hex(model, data.p), optimizer=args.optimizer,
        columns=["(intercept)"] + [_names(data)[c - 1] for c in model_columns(model, data.p)[1:]],
        beta=res.beta, deviance=res.full_data_deviance, log_likelihood=res.full_data_loglik,
        iterations=res.iterations, converged=res.converged, seconds=seconds))


def cmd_enumerate(args):
    data = _load(args)
    fitter = "irls" if args.fitter == "irls" else _sgd_config(args, data)
    ev = Evaluator(data, _evidence(args), fitter)
    prior = ModelPrior(args.q)
    t0 = time.perf_counter()
    log_ev = enumerate_log_evidence(ev, np.random.default_rng(args.seed), args.allow_large)
    est = estimates_from_log_evidence(log_ev, prior, data.p)
    seconds = time.perf_counter() - t0
    _write_estimates(args.out / "estimates.csv", data.p,
                     ((m, log_ev[m], 1, est.model_probs[m], None) for m in range(1 << data.p)))
    _write_inclusion(args.out / "inclusion.csv", _names(data), {"probability": est.inclusion_probs})
    RunReport(vars(args), {"exact": est.inclusion_probs}, timings={"total": seconds},
              store={"models": 1 << data.p}).write(args.out / "report.json")


def _chain_outputs(args, data, store, traces, prior, seconds, curves=None, **summary):
    rm = rm_estimates(store, prior)
    trace_all = [m for t in traces for m in t]
    mc = mc_estimates(trace_all, data.p)
    if len(traces) == 1:
        (args.out / "trace.txt").write_text(trace_to_text(traces[0], data.p))
    else:
        for i, t in enumerate(traces):
            (args.out / f"trace_{i}.txt").write_text(trace_to_text(t, data.p))
    (args.out / "store.txt").write_text(store.to_text())
    _write_estimates(args.out / "estimates.csv", data.p, (
        (m, e.best_log_evidence, e.visits, rm.model_probs.get(m, 0.0), mc.model_probs.get(m, 0.0))
        for m, e in sorted(store.entries.items())))
    _write_inclusion(args.out / "inclusion.csv", _names(data),
                     {"rm": rm.inclusion_probs, "mc": mc.inclusion_probs})
    summary.update(models_visited=len(store), top=[(model_hex(m, data.p), pr) for m, pr in rm.top(10)])
    RunReport(vars(args), {"rm": rm.inclusion_probs, "mc": mc.inclusion_probs}, curves or {},
              {"total": seconds}, summary).write(args.out / "report.json")


def cmd_mjmcmc(args):
    data = _load(args)
    ev = Evaluator(data, _evidence(args))
    prior = ModelPrior(args.q)
    mix = KernelMix(mode_jump_prob=args.mode_jump_prob, rho=args.rho)
    t0 = time.perf_counter()
    results, store = run_chains(ev, prior, mix, args.iterations, args.chains, args.seed,
                                worker_count())
    _chain_outputs(args, data, store, [r.trace for r in results], prior, time.perf_counter() - t0,
                   acceptance=[r.accepted / args.iterations for r in results],
                   fits=[r.fits for r in results])


def cmd_submcmc(args):
    data = _load(args)
    prior = ModelPrior(args.q)
    cfg = Algo3Config(optimizer=_sgd_config(args, data), p_rand=args.p_rand,
                      sigma_rand=args.sigma_rand, restart=args.restart,
                      mix=KernelMix(mode_jump_prob=args.mode_jump_prob, rho=args.rho),
                      iterations=args.iterations, seed=args.seed, evidence=_evidence(args),
                      block=args.block)
    truth = read_inclusion(args.truth) if args.truth else None
    if truth is not None and truth.shape != (data.p,):
        raise LoadError(f"{args.truth}: expected {data.p} inclusion probabilities")
    t0 = time.perf_counter()
    res = run_algo3(data, prior, cfg, truth)
    rows = []
    for b, it in enumerate(res.block_ends):
        row = dict(iteration=int(it))
        if res.rmse_curve is not None:
            row.update(rm_rmse=res.rmse_curve["rm"][b], mc_rmse=res.rmse_curve["mc"][b])
        row.update({f"rm_{j + 1}": v for j, v in enumerate(res.rm_blocks[b])})
        row.update({f"mc_{j + 1}": v for j, v in enumerate(res.mc_blocks[b])})
        rows.append(row)
    write_rows(rows, args.out / "curves.csv")
    curves = None
    if res.rmse_curve is not None:
        curves = dict(iteration=res.block_ends, **res.rmse_curve)
    _chain_outputs(args, data, res.store, [res.trace], prior, time.perf_counter() - t0, curves,
                   acceptance=res.accepted / args.iterations, fits=res.fits,
                   failed_fits=res.failures)


def cmd_benchmark(args):
    data = _load(args)
    if args.models:
        lines = [ln.strip() for ln in args.models.read_text().splitlines() if ln.strip()]
        models = [_parse_model(ln, data.p) for ln in lines]
    else:
        log_ev = enumerate_log_evidence(Evaluator(data, EvidenceSpec("bic")), allow_large=False)
        models = [int(m) for m in np.argsort(-log_ev, kind="stable")[:args.top]]
    table = TABLE1
    if args.optimizers:
        wanted = [s.strip() for s in args.optimizers.split(",")]
        by_name = {s.name: s for s in TABLE1}
        bad = [w for w in wanted if w not in by_name]
        if bad:
            raise UsageError(f"unknown optimizers {bad}; choose from {list(by_name)}")
        table = tuple(by_name[w] for w in wanted)
    rows = benchmark_optimizers(data, models, table, args.repeats, args.seed)
    write_rows(rows, args.out / "benchmark.csv",
               ("model_hex", "optimizer", "repeat", "deviance", "deviance_error", "seconds",
                "status"))


def cmd_rmse(args):
    truth = read_inclusion(args.truth)
    est = np.array([read_inclusion(p, args.column) for p in args.estimates])
    if est.shape[1] != truth.shape[0]:
        raise LoadError("estimates and truth cover different numbers of covariates")
    err = rmse(est, truth)
    write_rows([dict(covariate=j + 1, rmse=e) for j, e in enumerate(err)], args.out / "rmse.csv")
    print(f"mean RMSE {err.mean():.6g}")


COMMANDS = {"gen-data": cmd_gen_data, "fit": cmd_fit, "enumerate": cmd_enumerate,
            "mjmcmc": cmd_mjmcmc, "submcmc": cmd_submcmc, "benchmark": cmd_benchmark,
            "rmse": cmd_rmse}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (UsageError, ValueError, OSError) as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (LoadError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
