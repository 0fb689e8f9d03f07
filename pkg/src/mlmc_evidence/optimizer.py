"""Doubly stochastic maximization of the evidence with Adam.

Every iteration draws a fresh mini-batch (and fresh inner samples) through
the chosen gradient estimator, then applies a bias-corrected Adam ascent
step. With the same seed and configuration the whole run is reproducible
bit for bit.
"""

import io
import time
from dataclasses import dataclass, field

import numpy as np

from .allocation import scale_to_budget
from .estimators import (
    SumoTruncation,
    default_level_weights,
    jackknife_minibatch,
    mlmc_gradient,
    nmc_gradient,
    randomized_mlmc_gradient,
    sumo_minibatch,
    _minibatch,
)
from .rng import Purpose, Rng

ESTIMATOR_KINDS = ("nmc", "mlmc", "rmlmc", "sumo", "jackknife")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int
    config: AdamConfig

    @classmethod
    def init(cls, dim: int, config: AdamConfig = AdamConfig()) -> "AdamState":
        return cls(m=np.zeros(dim), v=np.zeros(dim), step=0, config=config)


def adam_step(state: AdamState, grad: np.ndarray):
    """One ascent update; returns (new state, theta increment)."""
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.m.shape:
        raise ValueError("gradient dimension does not match optimizer state")
    cfg = state.config
    t = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad**2
    m_hat = m / (1.0 - cfg.beta1**t)
    v_hat = v / (1.0 - cfg.beta2**t)
    update = cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(m=m, v=v, step=t, config=cfg), update


@dataclass(frozen=True)
class EstimatorConfig:
    """Which gradient estimator drives the fit and at what per-step budget.

    kind 'nmc'/'jackknife' use `k` inner samples; 'mlmc' uses levels
    0..level with mini-batch sizes shrunk from `level_ratios` (default the
    beta=2 square-root rule) to `budget` inner samples per step; 'rmlmc'
    draws levels from `omega`; 'sumo' is governed by its truncation.
    """

    kind: str = "mlmc"
    k: int = 1
    level: int = 5
    budget: int = 256
    level_ratios: tuple | None = None
    omega: object | None = None
    sumo: SumoTruncation = field(default_factory=SumoTruncation)

    def __post_init__(self):
        if self.kind not in ESTIMATOR_KINDS:
            raise ValueError(f"unknown estimator kind {self.kind!r}")

    def label(self) -> str:
        if self.kind == "nmc":
            return f"nmc-k{self.k}"
        if self.kind == "jackknife":
            return f"jackknife-k{self.k}"
        if self.kind == "sumo":
            return f"sumo-k{self.sumo.k_max}"
        if self.kind == "mlmc":
            return f"mlmc-l{self.level}"
        return f"rmlmc-l{self.level}"


def make_gradient_fn(model, dataset, n_total: int, cfg: EstimatorConfig):
    """Bind an estimator config to (theta, rng) -> (gradient, cost)."""
    if cfg.kind == "nmc":
        m = max(1, cfg.budget // cfg.k)

        def fn(theta, rng):
            batch = _minibatch(dataset, m, rng.stream(Purpose.DATA_DRAW))
            g = nmc_gradient(model, batch, theta, cfg.k, n_total, rng)
            return g.vector, g.inner_sample_cost

    elif cfg.kind == "mlmc":
        ratios = cfg.level_ratios
        if ratios is None:
            ratios = 2.0 ** (-1.5 * np.arange(cfg.level + 1))
        sizes = scale_to_budget(ratios, cfg.budget)

        def fn(theta, rng):
            g = mlmc_gradient(model, dataset, theta, sizes, n_total, rng)
            return g.vector, g.inner_sample_cost

    elif cfg.kind == "rmlmc":
        omega = cfg.omega
        if omega is None:
            omega = default_level_weights(l_max=max(cfg.level, 1))
        m = max(1, round(cfg.budget / omega.expected_cost()))

        def fn(theta, rng):
            g = randomized_mlmc_gradient(model, dataset, theta, omega, m,
                                         n_total, rng)
            return g.vector, g.inner_sample_cost

    elif cfg.kind == "sumo":
        expected = float(np.sum(1.0 / np.arange(1, cfg.sumo.k_max + 1))) \
            if cfg.sumo.mode == "hard" else float(np.log(cfg.sumo.a) + 2.0)
        m = max(1, round(cfg.budget / expected))

        def fn(theta, rng):
            est, gvec = sumo_minibatch(model, dataset, theta, cfg.sumo, m,
                                       n_total, rng, with_grad=True)
            return gvec, est.inner_sample_cost

    else:  # jackknife
        m = max(1, cfg.budget // cfg.k)

        def fn(theta, rng):
            est, gvec = jackknife_minibatch(model, dataset, theta, cfg.k, m,
                                            n_total, rng, with_grad=True)
            return gvec, est.inner_sample_cost

    return fn


@dataclass
class TrainTrace:
    """Recorded optimization progress at selected iterations."""

    iterations: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    mses: list = field(default_factory=list)
    thetas: list = field(default_factory=list)

    def record(self, it, cost, wall, mse, theta):
        if self.iterations and it <= self.iterations[-1]:
            raise ValueError("trace iterations must be strictly increasing")
        self.iterations.append(int(it))
        self.costs.append(int(cost))
        self.wall_ms.append(float(wall))
        self.mses.append(float(mse) if mse is not None else float("nan"))
        self.thetas.append(np.asarray(theta, dtype=float).copy())

    @property
    def final_theta(self) -> np.ndarray:
        return self.thetas[-1]

    def to_csv(self, include_wall: bool = False) -> str:
        dim = self.thetas[0].size if self.thetas else 0
        buf = io.StringIO()
        cols = ["iter", "cost", "wall_ms", "mse"] + [f"theta_{j}" for j in range(dim)]
        buf.write(",".join(cols) + "\n")
        for i, it in enumerate(self.iterations):
            wall = self.wall_ms[i] if include_wall else 0.0
            row = [str(it), str(self.costs[i]), repr(float(wall)),
                   repr(float(self.mses[i]))]
            row += [repr(float(v)) for v in self.thetas[i]]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def parameter_mse(theta, theta_star) -> float:
    theta = np.asarray(theta, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    return float(np.mean((theta - theta_star) ** 2))


def fit(model, dataset, estimator: EstimatorConfig, adam: AdamConfig,
        iters: int, record_every: int, seed: int, theta0=None,
        n_total=None) -> TrainTrace:
    """Run the stochastic ascent loop and return the recorded trace.

    The trace always contains the initial and final iterates; `record_every`
    controls the density in between. The mean squared error column is
    against the dataset's generating parameters when they are known.
    """
    n_total = dataset.n if n_total is None else int(n_total)
    theta = (np.zeros(model.dim_theta) if theta0 is None
             else np.asarray(theta0, dtype=float).copy())
    grad_fn = make_gradient_fn(model, dataset, n_total, estimator)
    state = AdamState.init(model.dim_theta, adam)
    star = dataset.theta_star
    trace = TrainTrace()
    t0 = time.perf_counter()
    total_cost = 0

    def mse_now():
        return parameter_mse(theta, star) if star is not None else None

    trace.record(0, 0, 0.0, mse_now(), theta)
    rng = Rng(seed)
    for it in range(1, iters + 1):
        grad, cost = grad_fn(theta, rng.with_salt(it))
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(
                f"non-finite gradient at iteration {it}: {grad}"
            )
        total_cost += cost
        state, update = adam_step(state, grad)
        theta = theta + update
        if it == iters or (record_every > 0 and it % record_every == 0):
            wall = (time.perf_counter() - t0) * 1e3
            trace.record(it, total_cost, wall, mse_now(), theta)
    return trace
