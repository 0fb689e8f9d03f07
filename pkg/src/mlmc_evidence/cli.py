"""Command-line harness for the standard experiment families.

Subcommands: gen-data, decay, fit, compare, efficiency, lmelbo-fit. Every
subcommand is deterministic given its flags and seed; worker threads only
affect wall time. Errors exit nonzero with a single `error: ...` line.
"""

import argparse
import dataclasses
import os
import sys

import numpy as np

from .allocation import pilot_levels, scale_to_budget
from .diagnostics import (
    comparison_csv,
    comparison_table,
    decay_report,
    efficiency_csv,
    efficiency_report,
)
from .estimators import SumoTruncation
from .lmelbo import GaussianPrior, fit_bayesian
from .models import (
    ConjugateGaussianModel,
    RandomEffectLogisticModel,
    generate_conjugate_data,
    generate_relogit_data,
    read_dataset_csv,
)
from .optimizer import AdamConfig, EstimatorConfig, fit
from .parallel import ENV_THREADS

DEFAULT_THETA_STAR = "1.0,0,0.25,0.5,0.75"


def _floats(text):
    return np.array([float(v) for v in text.split(",") if v != ""])


def _model_for(dataset):
    if dataset.d == 0 and dataset.t == 1:
        return ConjugateGaussianModel()
    return RandomEffectLogisticModel(d=dataset.d, t=dataset.t)


def _load(path):
    ds = read_dataset_csv(path)
    return _model_for(ds), ds


def _write(path, text):
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _parse_estimator(spec: str, budget: int) -> EstimatorConfig:
    """Estimator spec like nmc:8, mlmc:5, rmlmc:9, sumo:512, jackknife:64."""
    kind, _, arg = spec.partition(":")
    kind = kind.strip()
    n = int(arg) if arg else None
    if kind == "nmc":
        return EstimatorConfig(kind="nmc", k=n or 1, budget=budget)
    if kind == "mlmc":
        return EstimatorConfig(kind="mlmc", level=5 if n is None else n,
                               budget=budget)
    if kind == "rmlmc":
        return EstimatorConfig(kind="rmlmc", level=5 if n is None else n,
                               budget=budget)
    if kind == "sumo":
        return EstimatorConfig(kind="sumo", budget=budget,
                               sumo=SumoTruncation(mode="hard", k_max=n or 512))
    if kind == "jackknife":
        return EstimatorConfig(kind="jackknife", k=n or 64, budget=budget)
    raise ValueError(f"unknown estimator spec {spec!r}")


def _read_config(path) -> dict:
    """Flat key=value lines; blank lines and # comments ignored."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {line!r}")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def cmd_gen_data(args):
    theta_star = _floats(args.theta_star)
    if args.model == "relogit":
        ds = generate_relogit_data(args.n, args.t, theta_star, seed=args.seed)
    else:
        ds = generate_conjugate_data(args.n, theta_star, seed=args.seed)
    _write(args.out, ds.to_csv())


def cmd_decay(args):
    model, ds = _load(args.data)
    theta = _floats(args.theta)
    stats = pilot_levels(model, ds, theta, l_probe=args.levels,
                         reps_per_level=args.reps, seed=args.seed,
                         with_grad=args.grad, threads=args.threads)
    rep = decay_report(stats)
    _write(args.out, rep.to_csv())
    print(f"alpha_hat={rep.alpha_hat!r} beta_hat={rep.beta_hat!r}")
    if rep.alpha_grad_hat is not None:
        print(f"alpha_grad_hat={rep.alpha_grad_hat!r} "
              f"beta_grad_hat={rep.beta_grad_hat!r}")


def cmd_fit(args):
    model, ds = _load(args.data)
    spec = args.estimator
    if args.K is not None:
        spec = f"{spec}:{args.K}"
    elif args.L is not None:
        spec = f"{spec}:{args.L}"
    cfg = _parse_estimator(spec, args.budget)
    trace = fit(model, ds, cfg, AdamConfig(lr=args.lr), iters=args.iters,
                record_every=args.record_every, seed=args.seed)
    _write(args.trace_out, trace.to_csv(include_wall=args.wall_times))


def cmd_compare(args):
    conf = _read_config(args.config) if args.config else {}
    data = args.data or conf.get("data")
    if not data:
        raise ValueError("compare needs --data or data= in the config")
    model, ds = _load(data)
    star = args.theta_star or conf.get("theta_star")
    if star is None and model.name == "relogit":
        star = DEFAULT_THETA_STAR
    if star is not None:
        ds = dataclasses.replace(ds, theta_star=_floats(star))
    budget = args.budget or int(conf.get("budget", 256))
    iters = args.iters or int(conf.get("iters", 2000))
    reps = args.reps or int(conf.get("reps", 10))
    lr = args.lr or float(conf.get("lr", 0.01))
    seed = args.seed if args.seed is not None else int(conf.get("seed", 0))
    specs = (args.estimators or conf.get("estimators",
             "nmc:1,nmc:8,mlmc:5,rmlmc:5")).split(",")
    configs = [_parse_estimator(s, budget) for s in specs]
    rows = comparison_table(model, ds, configs, reps=reps,
                            adam=AdamConfig(lr=lr), iters=iters, seed=seed,
                            threads=args.threads)
    names = None
    if model.name == "relogit":
        names = ["eta", "w0"] + [f"w{j + 1}" for j in range(model.d)]
    _write(args.out, comparison_csv(rows, param_names=names))


def cmd_efficiency(args):
    model, ds = _load(args.data)
    if args.theta:
        theta = _floats(args.theta)
    elif ds.theta_star is not None:
        theta = ds.theta_star
    elif model.name == "relogit":
        theta = _floats(DEFAULT_THETA_STAR)
    else:
        raise ValueError("efficiency needs --theta for this dataset")
    levels = [int(v) for v in args.levels.split(",")]
    cells = efficiency_report(model, ds, theta, levels, reps=args.reps,
                              seed=args.seed, threads=args.threads)
    _write(args.out, efficiency_csv(cells))


def cmd_lmelbo_fit(args):
    model, ds = _load(args.data)
    if model.name != "relogit":
        raise ValueError("lmelbo-fit expects a random-effect logistic dataset")
    # coefficients are Bayesian; the variance parameter stays a point value
    indices = np.arange(1, model.dim_theta)
    prior = GaussianPrior(mean=np.zeros(indices.size),
                          std=np.full(indices.size, args.prior_std))
    sizes_raw = 2.0 ** (-1.5 * np.arange(args.levels + 1))
    sizes = scale_to_budget(sizes_raw, args.budget)
    names = ["w0"] + [f"w{j + 1}" for j in range(model.d)]
    trace, summary = fit_bayesian(model, ds, prior, sizes, iters=args.iters,
                                  seed=args.seed, adam=AdamConfig(lr=args.lr),
                                  indices=indices, param_names=names)
    _write(args.out, summary.to_csv())
    if args.trace_out:
        _write(args.trace_out, trace.to_csv())


def build_parser():
    p = argparse.ArgumentParser(
        prog="mlmc-evidence",
        description="Debiased evidence estimation experiments",
    )
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: {ENV_THREADS} or all cores)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic dataset CSV")
    g.add_argument("--model", choices=["relogit", "conjugate"], default="relogit")
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--t", type=int, default=2)
    g.add_argument("--theta-star", default=DEFAULT_THETA_STAR)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    d = sub.add_parser("decay", help="correction decay rates across levels")
    d.add_argument("--data", required=True)
    d.add_argument("--theta", default=DEFAULT_THETA_STAR)
    d.add_argument("--levels", type=int, default=7)
    d.add_argument("--reps", type=int, default=10000)
    d.add_argument("--grad", action="store_true")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decay)

    f = sub.add_parser("fit", help="stochastic fit with one estimator")
    f.add_argument("--data", required=True)
    f.add_argument("--estimator", required=True,
                   choices=["nmc", "mlmc", "rmlmc", "sumo", "jackknife"])
    f.add_argument("--K", type=int, default=None)
    f.add_argument("--L", type=int, default=None)
    f.add_argument("--budget", type=int, default=256)
    f.add_argument("--iters", type=int, default=2000)
    f.add_argument("--lr", type=float, default=0.01)
    f.add_argument("--record-every", type=int, default=50)
    f.add_argument("--wall-times", action="store_true",
                   help="record wall time (non-deterministic column)")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--trace-out", required=True)
    f.set_defaults(func=cmd_fit)

    c = sub.add_parser("compare", help="repeated fits across estimators")
    c.add_argument("--config", default=None)
    c.add_argument("--data", default=None)
    c.add_argument("--theta-star", default=None)
    c.add_argument("--estimators", default=None)
    c.add_argument("--reps", type=int, default=None)
    c.add_argument("--iters", type=int, default=None)
    c.add_argument("--budget", type=int, default=None)
    c.add_argument("--lr", type=float, default=None)
    c.add_argument("--seed", type=int, default=None)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)

    e = sub.add_parser("efficiency", help="variance x cost per estimator/level")
    e.add_argument("--data", required=True)
    e.add_argument("--theta", default=None)
    e.add_argument("--levels", default="3,4,5,6,7")
    e.add_argument("--reps", type=int, default=200)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_efficiency)

    b = sub.add_parser("lmelbo-fit", help="Bayesian fit of the coefficients")
    b.add_argument("--data", required=True)
    b.add_argument("--prior-std", type=float, default=1.0)
    b.add_argument("--levels", type=int, default=3)
    b.add_argument("--budget", type=int, default=128)
    b.add_argument("--iters", type=int, default=2000)
    b.add_argument("--lr", type=float, default=0.01)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    b.add_argument("--trace-out", default=None)
    b.set_defaults(func=cmd_lmelbo_fit)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        os.environ[ENV_THREADS] = str(args.threads)
    try:
        args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
