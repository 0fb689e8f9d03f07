"""Pilot runs over correction levels and optimal sample allocation.

A pilot estimates the per-level mean and variance of the correction terms
(and of their gradient counterparts) by replication. The plan then picks
the maximum level from the fitted bias decay and per-level mini-batch
sizes from the square-root rule, keeping the predicted variance within
half the squared error budget:

    L   = ceil(log2(sqrt(2) c1 / eps) / alpha)
    M_l = ceil(2 eps^-2 sqrt(V_l / C_l) * sum_l' sqrt(C_l' V_l'))
"""

import io
import math
from dataclasses import dataclass

import numpy as np

from .estimators import _delta_rows, _minibatch
from .parallel import parallel_map
from .rng import Purpose, Rng


class InsufficientPilotError(ValueError):
    """The plan needs levels the pilot did not cover."""


@dataclass(frozen=True)
class LevelStats:
    """Replicated correction-term statistics per level 0..L."""

    levels: np.ndarray          # (L+1,) ints
    mean_delta: np.ndarray      # (L+1,)
    var_delta: np.ndarray       # (L+1,)
    cost: np.ndarray            # (L+1,) = 2^level
    reps: np.ndarray            # (L+1,)
    mean_grad: np.ndarray | None = None        # (L+1, dt)
    var_grad_trace: np.ndarray | None = None   # (L+1,)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("level,mean_delta,var_delta,var_grad_trace,cost,reps\n")
        for i, lev in enumerate(self.levels):
            gt = "" if self.var_grad_trace is None else repr(float(self.var_grad_trace[i]))
            buf.write(
                f"{int(lev)},{float(self.mean_delta[i])!r},"
                f"{float(self.var_delta[i])!r},{gt},"
                f"{int(self.cost[i])},{int(self.reps[i])}\n"
            )
        return buf.getvalue()


@dataclass(frozen=True)
class AllocationPlan:
    """Maximum level and per-level mini-batch sizes for one error budget."""

    l_max: int
    m_levels: tuple[int, ...]
    epsilon: float
    predicted_variance: float
    predicted_cost: int
    alpha: float
    c1: float

    def __post_init__(self):
        if any(m < 1 for m in self.m_levels):
            raise ValueError("every mini-batch size must be at least 1")


def pilot_levels(model, dataset, theta, l_probe: int, reps_per_level: int,
                 seed: int, with_grad: bool = True, threads=None,
                 chunk: int = 4096) -> LevelStats:
    """Replicate the correction term at levels 0..l_probe.

    Each replicate draws a fresh data point and fresh inner samples. Work
    is chunked; chunks own derived streams, so the result does not depend
    on the worker count.
    """
    if reps_per_level < 2:
        raise ValueError("need at least 2 replicates per level")
    theta = model.check_theta(theta)
    levels = np.arange(l_probe + 1)

    def run_level(level: int):
        rows_per_chunk = max(1, chunk // (1 << level))
        starts = list(range(0, reps_per_level, rows_per_chunk))

        def run_chunk(ci):
            start = starts[ci]
            m = min(rows_per_chunk, reps_per_level - start)
            rng = Rng(seed).with_salt(ci)
            feat, resp = _minibatch(dataset, m,
                                    rng.stream(Purpose.DATA_DRAW, level=level))
            delta, gdelta, _ = _delta_rows(
                model, feat, resp, theta, level,
                rng.stream(Purpose.INNER_SAMPLE, level=level),
                with_grad=with_grad)
            return delta, gdelta

        parts = parallel_map(run_chunk, range(len(starts)), threads=threads)
        deltas = np.concatenate([p[0] for p in parts])
        gdeltas = np.concatenate([p[1] for p in parts]) if with_grad else None
        return deltas, gdeltas

    mean_d = np.empty(l_probe + 1)
    var_d = np.empty(l_probe + 1)
    mean_g = np.empty((l_probe + 1, model.dim_theta)) if with_grad else None
    var_gt = np.empty(l_probe + 1) if with_grad else None
    for level in levels:
        deltas, gdeltas = run_level(int(level))
        mean_d[level] = deltas.mean()
        var_d[level] = deltas.var(ddof=1)
        if with_grad:
            mean_g[level] = gdeltas.mean(axis=0)
            var_gt[level] = gdeltas.var(axis=0, ddof=1).sum()
    return LevelStats(
        levels=levels,
        mean_delta=mean_d,
        var_delta=var_d,
        cost=2 ** levels,
        reps=np.full(l_probe + 1, reps_per_level),
        mean_grad=mean_g,
        var_grad_trace=var_gt,
    )


def fit_decay_rate(levels, values):
    """Slope fit of log2(values) against level; returns (rate, level-1 value).

    `rate` is the negated slope, so values ~ c 2^(-rate l); the second
    element is the fitted magnitude at level 1.
    """
    levels = np.asarray(levels, dtype=float)
    values = np.asarray(values, dtype=float)
    keep = values > 0
    if keep.sum() < 2:
        return math.inf, 0.0
    slope, intercept = np.polyfit(levels[keep], np.log2(values[keep]), 1)
    return -float(slope), float(2.0 ** (intercept + slope))


def optimal_plan(stats: LevelStats, epsilon: float, bias_rate_alpha=None,
                 gradient: bool = False) -> AllocationPlan:
    """Choose (L, M_0..M_L) for a target root-mean-squared error.

    The bias constant is fitted from the pilot means of the correction
    levels (geometric-tail bound); the variance column is the scalar one or
    the gradient covariance trace when `gradient` is set.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    var = stats.var_grad_trace if gradient else stats.var_delta
    if gradient and var is None:
        raise InsufficientPilotError("pilot was run without gradient statistics")
    levels = stats.levels
    correction = levels >= 1
    if gradient:
        mags = np.linalg.norm(stats.mean_grad, axis=1)
    else:
        mags = np.abs(stats.mean_delta)

    if correction.sum() >= 2 and np.all(mags[correction] > 0):
        alpha_fit, mag1 = fit_decay_rate(levels[correction], mags[correction])
        alpha = float(np.clip(alpha_fit, 0.5, 1.5))
        if bias_rate_alpha is not None:
            alpha = float(bias_rate_alpha)
        # remaining bias after level L: geometric tail of the fitted means,
        # sum_{l > L} mag1 2^(-alpha (l-1)) = [mag1 / (1 - 2^-alpha)] 2^(-alpha L)
        r = 2.0 ** (-alpha)
        c1 = mag1 / (1.0 - r)
        l_max = max(0, math.ceil(math.log2(math.sqrt(2.0) * c1 / epsilon) / alpha))
    else:
        # degenerate pilot (vanishing corrections): single level suffices
        alpha = math.inf if bias_rate_alpha is None else float(bias_rate_alpha)
        c1 = 0.0
        l_max = 0

    if l_max > int(levels.max()):
        raise InsufficientPilotError(
            f"plan needs level {l_max} but pilot stopped at {int(levels.max())}"
        )

    use = levels <= l_max
    v = np.maximum(var[use], 0.0)
    c = stats.cost[use].astype(float)
    budget = 2.0 / epsilon**2
    total = np.sum(np.sqrt(c * v))
    m_levels = np.ceil(budget * np.sqrt(v / c) * total).astype(int)
    m_levels = np.maximum(m_levels, 1)
    predicted_variance = float(np.sum(v / m_levels))
    predicted_cost = int(np.sum(m_levels * c))
    return AllocationPlan(
        l_max=int(l_max),
        m_levels=tuple(int(v_) for v_ in m_levels),
        epsilon=float(epsilon),
        predicted_variance=predicted_variance,
        predicted_cost=predicted_cost,
        alpha=alpha,
        c1=c1,
    )


def scale_to_budget(ratios, budget: int) -> tuple[int, ...]:
    """Mini-batch sizes proportional to `ratios` costing about `budget`.

    Used to shrink a pilot plan to a per-optimization-step budget while
    preserving the relative level allocation.
    """
    ratios = np.asarray(ratios, dtype=float)
    if np.any(ratios <= 0):
        raise ValueError("ratios must be positive")
    costs = 2.0 ** np.arange(ratios.size)
    scale = budget / float(np.sum(ratios * costs))
    m = np.maximum(1, np.round(ratios * scale).astype(int))
    return tuple(int(v) for v in m)
