"""Locally marginalized ELBO: a Bayesian treatment of the parameters.

Selected components of theta become random with a mean-field Gaussian
variational posterior; local latents are still marginalized by the
multilevel estimator. The objective splits into a nested-expectation first
term, where each outer draw samples a data point and a parameter vector
from the variational posterior jointly, and an analytic Gaussian KL term.

Gradients with respect to the variational parameters flow through the
reparameterized parameter sample into the joint density; the per-point
proposal is conditioned on the sampled parameters but, as everywhere else
in the library, not differentiated through.
"""

import io
from dataclasses import dataclass

import numpy as np

from .estimators import EvidenceEstimate, _delta_rows
from .models import sigmoid, softplus
from .optimizer import AdamConfig, AdamState, TrainTrace, adam_step, parameter_mse
from .rng import Purpose, Rng


def inv_softplus(y):
    """Inverse of log(1 + exp(x)), for positive y."""
    y = np.asarray(y, dtype=float)
    return y + np.log1p(-np.exp(-y))


@dataclass(frozen=True)
class GaussianVariational:
    """Mean-field Gaussian over the random parameter components.

    The standard deviation is softplus(rho) so optimization over rho is
    unconstrained.
    """

    mu: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "rho", np.asarray(self.rho, dtype=float))
        if self.mu.shape != self.rho.shape:
            raise ValueError("variational mean and rho shapes differ")

    @classmethod
    def from_std(cls, mu, std) -> "GaussianVariational":
        return cls(mu=np.asarray(mu, dtype=float),
                   rho=inv_softplus(np.asarray(std, dtype=float)))

    @property
    def std(self) -> np.ndarray:
        return softplus(self.rho)

    def sample(self, stream, m: int):
        """m reparameterized draws; returns (values (m, d), eps (m, d))."""
        eps = stream.normal((m, self.mu.size))
        return self.mu + self.std * eps, eps


@dataclass(frozen=True)
class GaussianPrior:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))
        if self.mean.shape != self.std.shape:
            raise ValueError("prior mean and std shapes differ")
        if np.any(self.std <= 0):
            raise ValueError("prior std must be positive")


def kl_gaussian_diag(q: GaussianVariational, p: GaussianPrior) -> float:
    """KL divergence between diagonal Gaussians, summed over components."""
    sq, sp = q.std, p.std
    if q.mu.shape != p.mean.shape:
        raise ValueError("variational and prior dimensions differ")
    terms = np.log(sp / sq) + (sq**2 + (q.mu - p.mean) ** 2) / (2.0 * sp**2) - 0.5
    return float(terms.sum())


def kl_gaussian_diag_gradient(q: GaussianVariational, p: GaussianPrior):
    """Gradient of the KL with respect to (mu, rho)."""
    sq, sp = q.std, p.std
    dmu = (q.mu - p.mean) / sp**2
    dstd = sq / sp**2 - 1.0 / sq
    return dmu, dstd * sigmoid(q.rho)


def _assemble_theta(point_theta, indices, values):
    m = values.shape[0]
    theta = np.broadcast_to(point_theta, (m, point_theta.size)).copy()
    theta[:, indices] = values
    return theta


def _lmelbo_terms(model, dataset, q, prior, level_sizes, n_total, rng,
                  indices=None, point_theta=None, with_grad=False):
    indices = (np.arange(model.dim_theta) if indices is None
               else np.asarray(indices, dtype=int))
    point_theta = (np.zeros(model.dim_theta) if point_theta is None
                   else np.asarray(point_theta, dtype=float))
    point_mask = np.ones(model.dim_theta, dtype=bool)
    point_mask[indices] = False
    first = 0.0
    gmu = np.zeros(indices.size)
    grho = np.zeros(indices.size)
    gpoint = np.zeros(int(point_mask.sum()))
    cost = 0
    drho = sigmoid(q.rho)
    if dataset.n > 0:
        for level, m in enumerate(int(v) for v in level_sizes):
            outer = rng.stream(Purpose.DATA_DRAW, level=level)
            idx = outer.indices(dataset.n, m)
            feat, resp = dataset.take(idx)
            values, eps = q.sample(outer, m)
            thetas = _assemble_theta(point_theta, indices, values)
            delta, gdelta, c = _delta_rows(
                model, feat, resp, thetas, level,
                rng.stream(Purpose.INNER_SAMPLE, level=level),
                with_grad=with_grad)
            first += n_total * float(delta.mean())
            cost += c
            if with_grad:
                gr = gdelta[:, indices]
                gmu += n_total * gr.mean(axis=0)
                grho += n_total * (gr * eps).mean(axis=0) * drho
                gpoint += n_total * gdelta[:, point_mask].mean(axis=0)
    kl = kl_gaussian_diag(q, prior)
    if not with_grad:
        return first - kl, None, cost
    kmu, krho = kl_gaussian_diag_gradient(q, prior)
    return first - kl, (gmu - kmu, grho - krho, gpoint), cost


def lmelbo_mlmc_estimate(model, dataset, q: GaussianVariational,
                         prior: GaussianPrior, level_sizes, n_total: int,
                         rng: Rng, indices=None,
                         point_theta=None) -> EvidenceEstimate:
    """Multilevel estimate of the locally marginalized lower bound.

    `level_sizes` gives the per-level mini-batch sizes for the first term;
    the KL term is analytic. `indices` restricts the Bayesian treatment to
    a subset of theta, with the remaining components held at `point_theta`.
    """
    value, _, cost = _lmelbo_terms(model, dataset, q, prior, level_sizes,
                                   n_total, rng, indices=indices,
                                   point_theta=point_theta)
    return EvidenceEstimate(value=value, inner_sample_cost=cost)


def lmelbo_gradient(model, dataset, q, prior, level_sizes, n_total, rng,
                    indices=None, point_theta=None):
    """Gradient of the bound: (d_mu, d_rho, d_point_theta, cost)."""
    _, grads, cost = _lmelbo_terms(model, dataset, q, prior, level_sizes,
                                   n_total, rng, indices=indices,
                                   point_theta=point_theta,
                                   with_grad=True)
    return grads[0], grads[1], grads[2], cost


@dataclass(frozen=True)
class PosteriorSummary:
    names: tuple
    post_mean: np.ndarray
    post_sd: np.ndarray
    prior_mean: np.ndarray
    prior_sd: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("param,post_mean,post_sd,prior_mean,prior_sd\n")
        for i, name in enumerate(self.names):
            buf.write(f"{name},{float(self.post_mean[i])!r},"
                      f"{float(self.post_sd[i])!r},"
                      f"{float(self.prior_mean[i])!r},"
                      f"{float(self.prior_sd[i])!r}\n")
        return buf.getvalue()


def fit_bayesian(model, dataset, prior: GaussianPrior, level_sizes,
                 iters: int, seed: int, adam: AdamConfig = AdamConfig(),
                 indices=None, point_theta0=None, init_std: float = 0.3,
                 record_every: int = 0, n_total=None, param_names=None):
    """Stochastic ascent on the bound over (mu, rho, point components).

    Returns (trace, posterior summary). The trace records the assembled
    parameter vector (posterior means in the random slots) so its error
    column is comparable with the frequentist fits.
    """
    n_total = dataset.n if n_total is None else int(n_total)
    indices = (np.arange(model.dim_theta) if indices is None
               else np.asarray(indices, dtype=int))
    point_mask = np.ones(model.dim_theta, dtype=bool)
    point_mask[indices] = False
    dr = indices.size
    mu = np.zeros(dr)
    rho = np.full(dr, float(inv_softplus(init_std)))
    point = (np.zeros(int(point_mask.sum())) if point_theta0 is None
             else np.asarray(point_theta0, dtype=float).copy())
    state = AdamState.init(2 * dr + point.size, adam)
    star = dataset.theta_star
    trace = TrainTrace()

    def assembled():
        theta = np.zeros(model.dim_theta)
        theta[indices] = mu
        theta[point_mask] = point
        return theta

    def mse_now():
        return parameter_mse(assembled(), star) if star is not None else None

    trace.record(0, 0, 0.0, mse_now(), assembled())
    rng = Rng(seed)
    total_cost = 0
    for it in range(1, iters + 1):
        q = GaussianVariational(mu=mu, rho=rho)
        pt = np.zeros(model.dim_theta)
        pt[point_mask] = point
        gmu, grho, gpoint, cost = lmelbo_gradient(
            model, dataset, q, prior, level_sizes, n_total,
            rng.with_salt(it), indices=indices, point_theta=pt)
        grad = np.concatenate([gmu, grho, gpoint])
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite gradient at iteration {it}")
        total_cost += cost
        state, update = adam_step(state, grad)
        mu = mu + update[:dr]
        rho = rho + update[dr:2 * dr]
        point = point + update[2 * dr:]
        if it == iters or (record_every > 0 and it % record_every == 0):
            trace.record(it, total_cost, 0.0, mse_now(), assembled())
    if param_names is None:
        param_names = tuple(f"theta_{int(i)}" for i in indices)
    summary = PosteriorSummary(
        names=tuple(param_names),
        post_mean=mu.copy(),
        post_sd=softplus(rho),
        prior_mean=prior.mean.copy(),
        prior_sd=prior.std.copy(),
    )
    return trace, summary
