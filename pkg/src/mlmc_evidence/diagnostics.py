"""Empirical convergence-rate, efficiency, and accuracy reports.

These reproduce the library's three standard analyses: decay slopes of the
correction terms across levels, variance-times-cost of each gradient
estimator at matched bias levels, and mean/spread tables of repeated fits.
Costs are measured in inner latent draws, which is hardware independent
and proportional to runtime at fixed per-sample work.
"""

import io
import math
from dataclasses import dataclass

import numpy as np

from .allocation import LevelStats, fit_decay_rate
from .estimators import (
    SumoTruncation,
    default_level_weights,
    mlmc_gradient,
    nmc_gradient,
    randomized_mlmc_gradient,
    sumo_minibatch,
    _minibatch,
)
from .optimizer import fit, parameter_mse
from .parallel import parallel_map
from .rng import Purpose, Rng

EFFICIENCY_ESTIMATORS = ("nmc", "mlmc", "rmlmc", "sumo")


# ---------------------------------------------------------------------------
# Decay-rate report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecayReport:
    """Fitted decay rates: means ~ 2^(-alpha l), variances ~ 2^(-beta l)."""

    alpha_hat: float
    beta_hat: float
    alpha_grad_hat: float | None
    beta_grad_hat: float | None
    degenerate: bool
    stats: LevelStats

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,mean,var,grad_var_trace\n")
        s = self.stats
        for i, lev in enumerate(s.levels):
            gt = "" if s.var_grad_trace is None else repr(float(s.var_grad_trace[i]))
            buf.write(f"{int(lev)},{float(s.mean_delta[i])!r},"
                      f"{float(s.var_delta[i])!r},{gt}\n")
        return buf.getvalue()


def decay_report(stats: LevelStats) -> DecayReport:
    """Slopes of log2 mean and log2 variance against level, for l >= 1.

    Level 0 is the main term, not a correction, so it is excluded from the
    fits. Exactly zero means or variances (the conjugate case) make the
    decay degenerate; the report then flags it and returns infinite rates.
    """
    sel = stats.levels >= 1
    if sel.sum() < 2:
        raise ValueError("need statistics for at least two correction levels")
    levels = stats.levels[sel]
    mean_mag = np.abs(stats.mean_delta[sel])
    var = stats.var_delta[sel]
    degenerate = bool(np.any(mean_mag == 0) or np.any(var == 0))
    if degenerate:
        alpha_hat = beta_hat = math.inf
    else:
        alpha_hat, _ = fit_decay_rate(levels, mean_mag)
        beta_hat, _ = fit_decay_rate(levels, var)
    alpha_g = beta_g = None
    if stats.mean_grad is not None:
        gnorm = np.linalg.norm(stats.mean_grad[sel], axis=1)
        gvar = stats.var_grad_trace[sel]
        if np.any(gnorm == 0) or np.any(gvar == 0):
            degenerate = True
            alpha_g = beta_g = math.inf
        else:
            alpha_g, _ = fit_decay_rate(levels, gnorm)
            beta_g, _ = fit_decay_rate(levels, gvar)
    return DecayReport(
        alpha_hat=alpha_hat,
        beta_hat=beta_hat,
        alpha_grad_hat=alpha_g,
        beta_grad_hat=beta_g,
        degenerate=degenerate,
        stats=stats,
    )


# ---------------------------------------------------------------------------
# Efficiency report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EfficiencyCell:
    estimator: str
    level: int
    variance: float
    mean_cost: float
    var_times_cost: float


def _one_gradient_draw(model, dataset, theta, estimator: str, level: int,
                       n_total: int, rng: Rng):
    """One gradient estimate targeting the 2^level-sample objective."""
    if estimator == "nmc":
        batch = _minibatch(dataset, 1, rng.stream(Purpose.DATA_DRAW))
        g = nmc_gradient(model, batch, theta, 1 << level, n_total, rng)
        return g.vector, g.inner_sample_cost
    if estimator == "mlmc":
        sizes = np.maximum(1, np.round(2.0 ** (1.5 * (level - np.arange(level + 1))))).astype(int)
        g = mlmc_gradient(model, dataset, theta, sizes, n_total, rng)
        return g.vector, g.inner_sample_cost
    if estimator == "rmlmc":
        omega = default_level_weights(l_max=max(level, 1))
        g = randomized_mlmc_gradient(model, dataset, theta, omega,
                                     1 << level, n_total, rng)
        return g.vector, g.inner_sample_cost
    if estimator == "sumo":
        trunc = SumoTruncation(mode="hard", k_max=1 << level)
        est, gvec = sumo_minibatch(model, dataset, theta, trunc, 1, n_total,
                                   rng, with_grad=True)
        return gvec, est.inner_sample_cost
    raise ValueError(f"unknown estimator {estimator!r}")


def efficiency_report(model, dataset, theta, levels, reps: int, seed: int,
                      estimators=EFFICIENCY_ESTIMATORS, threads=None,
                      n_total: int = 1) -> list[EfficiencyCell]:
    """Empirical variance x mean cost per (estimator, level) cell.

    The variance is the trace of the sample covariance of the gradient
    estimate over `reps` independent replicates; the cost column is the
    exact mean of the estimator-reported inner-sample counts.
    """
    if reps < 2:
        raise ValueError("need at least 2 replicates per cell")
    theta = model.check_theta(theta)
    cells = [(e, int(l)) for e in estimators for l in levels]

    def run_cell(ci):
        estimator, level = cells[ci]
        rng = Rng(seed).child(ci)
        vecs = np.empty((reps, model.dim_theta))
        costs = np.empty(reps)
        for r in range(reps):
            vec, cost = _one_gradient_draw(model, dataset, theta, estimator,
                                           level, n_total, rng.with_salt(r))
            vecs[r] = vec
            costs[r] = cost
        var = float(vecs.var(axis=0, ddof=1).sum())
        mean_cost = float(costs.mean())
        return EfficiencyCell(estimator=estimator, level=level, variance=var,
                              mean_cost=mean_cost,
                              var_times_cost=var * mean_cost)

    return parallel_map(run_cell, range(len(cells)), threads=threads)


def efficiency_csv(cells) -> str:
    buf = io.StringIO()
    buf.write("estimator,L,var,cost,var_x_cost\n")
    for c in cells:
        buf.write(f"{c.estimator},{c.level},{c.variance!r},"
                  f"{c.mean_cost!r},{c.var_times_cost!r}\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Comparison table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    label: str
    theta_mean: np.ndarray
    theta_sd: np.ndarray
    mse: float


def comparison_table(model, dataset, configs, reps: int, adam, iters: int,
                     seed: int, threads=None, record_every: int = 0,
                     theta0=None) -> list[ComparisonRow]:
    """Mean and spread of repeated fits per estimator configuration.

    Returns one row per configuration (plus a leading ground-truth row when
    the dataset knows its generating parameters); the MSE column is the
    average over replicates of the per-fit parameter mean squared error.
    """
    if reps < 2:
        raise ValueError("need at least 2 repetitions")
    tasks = [(ci, r) for ci in range(len(configs)) for r in range(reps)]

    def run(task):
        ci, r = task
        cfg = configs[ci]
        trace = fit(model, dataset, cfg, adam, iters=iters,
                    record_every=record_every, theta0=theta0,
                    seed=Rng(seed).child(ci, r).seed)
        return trace.final_theta

    finals = parallel_map(run, tasks, threads=threads)
    rows = []
    star = dataset.theta_star
    if star is not None:
        rows.append(ComparisonRow(label="truth",
                                  theta_mean=np.asarray(star, dtype=float),
                                  theta_sd=np.zeros(len(star)), mse=0.0))
    for ci, cfg in enumerate(configs):
        thetas = np.stack([finals[i] for i, (c, _) in enumerate(tasks) if c == ci])
        mse = float("nan")
        if star is not None:
            mse = float(np.mean([parameter_mse(t, star) for t in thetas]))
        rows.append(ComparisonRow(
            label=cfg.label(),
            theta_mean=thetas.mean(axis=0),
            theta_sd=thetas.std(axis=0, ddof=1),
            mse=mse,
        ))
    return rows


def comparison_csv(rows, param_names=None) -> str:
    dim = rows[0].theta_mean.size
    if param_names is None:
        param_names = [f"theta_{j}" for j in range(dim)]
    buf = io.StringIO()
    cols = ["estimator"]
    for name in param_names:
        cols += [f"{name}_mean", f"{name}_sd"]
    cols.append("mse")
    buf.write(",".join(cols) + "\n")
    for r in rows:
        vals = [r.label]
        for j in range(dim):
            vals += [repr(float(r.theta_mean[j])), repr(float(r.theta_sd[j]))]
        vals.append(repr(float(r.mse)))
        buf.write(",".join(vals) + "\n")
    return buf.getvalue()
