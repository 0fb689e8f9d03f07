"""Debiased estimators of the log evidence and its gradient.

Five estimator families over a shared log-weight layer:

* nested Monte Carlo: K inner samples per mini-batch point;
* coupled multilevel Monte Carlo: telescoping corrections where the
  2^l-sample bound shares its inner samples with the two half-sample
  bounds, so exp(full) is exactly the mean of the two half exponentials;
* randomized multilevel Monte Carlo: a single correction at a random level
  divided by its probability, unbiased for the true evidence;
* SUMO: a Russian-roulette weighted sum of successive one-sample-increment
  differences with survival probabilities 1/k (hard cap) or a geometric
  soft tail;
* first-order Jackknife: resampling bias removal on shared samples.

Values are scaled to the full-data objective (the per-point average times
`n_total`); costs count inner latent draws exactly.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Purpose, Rng
from .weights import draw_log_weight_rows, iwelbo_gradient_rows, iwelbo_rows

JACKKNIFE_DIRECT_MAX_K = 256


@dataclass(frozen=True)
class LevelTerm:
    level: int
    value: float
    m: int
    cost: int


@dataclass(frozen=True)
class EvidenceEstimate:
    value: float
    inner_sample_cost: int
    level_breakdown: tuple[LevelTerm, ...] | None = None


@dataclass(frozen=True)
class GradientEstimate:
    vector: np.ndarray
    inner_sample_cost: int


@dataclass(frozen=True)
class LevelWeights:
    """Probability vector over correction levels 0..L_max."""

    omega: np.ndarray

    def __post_init__(self):
        om = np.asarray(self.omega, dtype=float)
        object.__setattr__(self, "omega", om)
        if om.ndim != 1 or om.size < 1 or np.any(om <= 0):
            raise ValueError("level weights must be positive")
        if abs(om.sum() - 1.0) > 1e-12:
            raise ValueError("level weights must sum to 1")

    @property
    def l_max(self) -> int:
        return self.omega.size - 1

    def expected_cost(self) -> float:
        return float(np.sum(self.omega * 2.0 ** np.arange(self.omega.size)))

    def sample_levels(self, stream, count: int) -> np.ndarray:
        cum = np.cumsum(self.omega)
        cum[-1] = 1.0
        return np.searchsorted(cum, stream.uniform(count), side="right")


def default_level_weights(beta: float = 2.0, l_max: int = 14) -> LevelWeights:
    """Weights proportional to 2^(-(beta+1) l / 2), truncated and renormalized."""
    raw = 2.0 ** (-(beta + 1.0) * np.arange(l_max + 1) / 2.0)
    return LevelWeights(raw / raw.sum())


@dataclass(frozen=True)
class SumoTruncation:
    """Distribution of the random inner-sample count for SUMO.

    Hard mode: P(k <= K) = 1/k up to `k_max`, zero beyond. Soft mode:
    P(k <= K) = 1/k below the knee `a` and (1/a) 0.9^(k-a) from it on.
    """

    a: int = 80
    mode: str = "hard"
    k_max: int = 512

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError("truncation mode must be 'hard' or 'soft'")
        if self.mode == "hard" and self.k_max < 1:
            raise ValueError("hard truncation needs k_max >= 1")
        if self.mode == "soft" and self.a < 1:
            raise ValueError("soft truncation needs a >= 1")

    def survival(self, k) -> np.ndarray:
        """P(k <= K) for integer k >= 1."""
        k = np.asarray(k, dtype=float)
        if self.mode == "hard":
            return np.where(k <= self.k_max, 1.0 / k, 0.0)
        return np.where(k < self.a, 1.0 / k,
                        (1.0 / self.a) * 0.9 ** (k - self.a))

    def sample(self, stream, count: int) -> np.ndarray:
        """Draw counts by inverting the survival function."""
        u = stream.open_uniform(count)
        hard = np.floor(1.0 / u).astype(np.int64)
        if self.mode == "hard":
            return np.minimum(hard, self.k_max)
        tail = u <= 1.0 / self.a
        out = np.minimum(hard, self.a - 1) if self.a > 1 else hard
        out = np.where(tail,
                       self.a + np.floor(np.log(self.a * u) / np.log(0.9)).astype(np.int64),
                       out)
        return np.maximum(out, 1)


# ---------------------------------------------------------------------------
# Coupled correction terms
# ---------------------------------------------------------------------------

def coupled_terms(lw: np.ndarray):
    """Full-row and half-row bounds sharing one set of samples.

    lw has shape (M, K) with K an even power of two. Returns (full, half_a,
    half_b), each (M,). By construction exp(full) = (exp(half_a) +
    exp(half_b)) / 2 exactly.
    """
    k = lw.shape[1]
    if k < 2 or k % 2:
        raise ValueError("coupled rows need an even number of samples")
    half = k // 2
    return (iwelbo_rows(lw),
            iwelbo_rows(lw[:, :half]),
            iwelbo_rows(lw[:, half:]))


def _delta_rows(model, feat, resp, theta, level: int, stream,
                with_grad: bool = False):
    """Per-row correction estimates at one level.

    Returns (delta (M,), grad_delta (M, dt) or None, cost). Level 0 is the
    single-sample main term; level l >= 1 draws 2^l shared samples and
    couples the full bound against the averaged half bounds.
    """
    k = 1 << level
    lw, grads = draw_log_weight_rows(model, feat, resp, theta, k, stream,
                                     with_grad=with_grad)
    cost = lw.size
    if level == 0:
        delta = lw[:, 0]
        gdelta = None if grads is None else grads[:, 0, :]
        return delta, gdelta, cost
    full, half_a, half_b = coupled_terms(lw)
    delta = full - 0.5 * (half_a + half_b)
    gdelta = None
    if grads is not None:
        h = k // 2
        gfull = iwelbo_gradient_rows(lw, grads)
        ga = iwelbo_gradient_rows(lw[:, :h], grads[:, :h, :])
        gb = iwelbo_gradient_rows(lw[:, h:], grads[:, h:, :])
        gdelta = gfull - 0.5 * (ga + gb)
    return delta, gdelta, cost


def mlmc_delta(model, x, theta, level: int, rng: Rng, with_grad: bool = False):
    """One correction-term sample for one data point.

    Returns (delta, grad_delta or None, cost). When the gradient is
    requested it is computed from the identical inner samples as the
    scalar value.
    """
    if level < 0:
        raise ValueError("level must be nonnegative")
    theta = model.check_theta(theta)
    stream = rng.stream(Purpose.INNER_SAMPLE, level=level)
    feat, resp = x.features[None, ...], x.responses[None, ...]
    delta, gdelta, cost = _delta_rows(model, feat, resp, theta, level, stream,
                                      with_grad=with_grad)
    return float(delta[0]), (None if gdelta is None else gdelta[0]), cost


def mlmc_gradient_delta(model, x, theta, level: int, rng: Rng):
    """Gradient correction-term sample for one data point."""
    _, gdelta, cost = mlmc_delta(model, x, theta, level, rng, with_grad=True)
    return gdelta, cost


# ---------------------------------------------------------------------------
# Nested Monte Carlo
# ---------------------------------------------------------------------------

def _minibatch(dataset, m: int, stream):
    idx = stream.indices(dataset.n, m)
    feat, resp = dataset.take(idx)
    return feat, resp


def nmc_evidence(model, minibatch, theta, k: int, n_total: int,
                 rng: Rng) -> EvidenceEstimate:
    """(N/M) sum of K-sample bounds over an explicit mini-batch."""
    feat, resp, m = _as_batch(minibatch)
    if m < 1 or k < 1:
        raise ValueError("need a nonempty mini-batch and k >= 1")
    theta = model.check_theta(theta)
    stream = rng.stream(Purpose.INNER_SAMPLE, level=0)
    lw, _ = draw_log_weight_rows(model, feat, resp, theta, k, stream)
    value = n_total * float(np.mean(iwelbo_rows(lw)))
    return EvidenceEstimate(value=value, inner_sample_cost=lw.size)


def nmc_gradient(model, minibatch, theta, k: int, n_total: int,
                 rng: Rng) -> GradientEstimate:
    feat, resp, m = _as_batch(minibatch)
    if m < 1 or k < 1:
        raise ValueError("need a nonempty mini-batch and k >= 1")
    theta = model.check_theta(theta)
    stream = rng.stream(Purpose.INNER_SAMPLE, level=0)
    lw, grads = draw_log_weight_rows(model, feat, resp, theta, k, stream,
                                     with_grad=True)
    vec = n_total * iwelbo_gradient_rows(lw, grads).mean(axis=0)
    return GradientEstimate(vector=vec, inner_sample_cost=lw.size)


def _as_batch(minibatch):
    """Accept (feat, resp) arrays, a Dataset, or a list of DataPoints."""
    if isinstance(minibatch, tuple):
        feat, resp = minibatch
    elif hasattr(minibatch, "features") and hasattr(minibatch, "responses"):
        feat, resp = minibatch.features, minibatch.responses
    else:
        feat = np.stack([p.features for p in minibatch])
        resp = np.stack([p.responses for p in minibatch])
    if feat.ndim == 2:  # single point
        feat, resp = feat[None], resp[None]
    return feat, resp, feat.shape[0]


# ---------------------------------------------------------------------------
# Coupled MLMC over a level allocation
# ---------------------------------------------------------------------------

def _level_sizes(plan):
    sizes = getattr(plan, "m_levels", plan)
    sizes = [int(v) for v in sizes]
    if not sizes or any(v < 1 for v in sizes):
        raise ValueError("every level needs a mini-batch size of at least 1")
    return sizes


def _mlmc_terms(model, dataset, theta, plan, n_total: int, rng: Rng,
                with_grad: bool):
    sizes = _level_sizes(plan)
    theta = model.check_theta(theta)
    terms, gvec, total_cost = [], 0.0, 0
    for level, m in enumerate(sizes):
        data_s = rng.stream(Purpose.DATA_DRAW, level=level)
        inner_s = rng.stream(Purpose.INNER_SAMPLE, level=level)
        feat, resp = _minibatch(dataset, m, data_s)
        delta, gdelta, cost = _delta_rows(model, feat, resp, theta, level,
                                          inner_s, with_grad=with_grad)
        value = n_total * float(delta.mean())
        terms.append(LevelTerm(level=level, value=value, m=m, cost=cost))
        if with_grad:
            gvec = gvec + n_total * gdelta.mean(axis=0)
        total_cost += cost
    return terms, gvec, total_cost


def mlmc_evidence(model, dataset, theta, plan, n_total: int,
                  rng: Rng) -> EvidenceEstimate:
    """Telescoping-sum estimate with independent mini-batches per level."""
    terms, _, cost = _mlmc_terms(model, dataset, theta, plan, n_total, rng,
                                 with_grad=False)
    return EvidenceEstimate(value=sum(t.value for t in terms),
                            inner_sample_cost=cost,
                            level_breakdown=tuple(terms))


def mlmc_gradient(model, dataset, theta, plan, n_total: int,
                  rng: Rng) -> GradientEstimate:
    _, gvec, cost = _mlmc_terms(model, dataset, theta, plan, n_total, rng,
                                with_grad=True)
    return GradientEstimate(vector=gvec, inner_sample_cost=cost)


# ---------------------------------------------------------------------------
# Randomized MLMC
# ---------------------------------------------------------------------------

def _randomized_terms(model, dataset, theta, weights: LevelWeights, m: int,
                      n_total: int, rng: Rng, with_grad: bool):
    if m < 1:
        raise ValueError("mini-batch size must be at least 1")
    theta = model.check_theta(theta)
    levels = weights.sample_levels(rng.stream(Purpose.LEVEL_DRAW), m)
    feat, resp = _minibatch(dataset, m, rng.stream(Purpose.DATA_DRAW))
    values = np.empty(m)
    gvecs = np.empty((m, model.dim_theta)) if with_grad else None
    cost = 0
    for level in np.unique(levels):
        rows = np.nonzero(levels == level)[0]
        inner_s = rng.stream(Purpose.INNER_SAMPLE, level=int(level))
        delta, gdelta, c = _delta_rows(model, feat[rows], resp[rows], theta,
                                       int(level), inner_s, with_grad=with_grad)
        w = weights.omega[level]
        values[rows] = delta / w
        if with_grad:
            gvecs[rows] = gdelta / w
        cost += c
    value = n_total * float(values.mean())
    gvec = None if gvecs is None else n_total * gvecs.mean(axis=0)
    return value, gvec, cost


def randomized_mlmc_evidence(model, dataset, theta, weights: LevelWeights,
                             m: int, n_total: int, rng: Rng) -> EvidenceEstimate:
    """Single-term estimator at a random level; unbiased for the evidence."""
    value, _, cost = _randomized_terms(model, dataset, theta, weights, m,
                                       n_total, rng, with_grad=False)
    return EvidenceEstimate(value=value, inner_sample_cost=cost)


def randomized_mlmc_gradient(model, dataset, theta, weights: LevelWeights,
                             m: int, n_total: int, rng: Rng) -> GradientEstimate:
    value, gvec, cost = _randomized_terms(model, dataset, theta, weights, m,
                                          n_total, rng, with_grad=True)
    return GradientEstimate(vector=gvec, inner_sample_cost=cost)


# ---------------------------------------------------------------------------
# SUMO
# ---------------------------------------------------------------------------

def _prefix_bounds(lw, grads=None):
    """Streaming prefix bounds L_1..L_K for each row.

    Returns (bounds (M, K), grad_bounds (M, K, dt) or None) where
    bounds[:, k-1] is the k-sample bound over the first k shared samples.
    """
    m, kmax = lw.shape
    bounds = np.empty_like(lw)
    gbounds = None if grads is None else np.empty_like(grads)
    c = np.full(m, -np.inf)
    s = np.zeros(m)
    acc = None if grads is None else np.zeros((m, grads.shape[2]))
    for k in range(kmax):
        c_new = np.maximum(c, lw[:, k])
        scale = np.exp(c - c_new)
        inc = np.exp(lw[:, k] - c_new)
        s = s * scale + inc
        bounds[:, k] = np.log(s) + c_new - np.log(k + 1)
        if grads is not None:
            acc = acc * scale[:, None] + inc[:, None] * grads[:, k, :]
            gbounds[:, k, :] = acc / s[:, None]
        c = c_new
    return bounds, gbounds


def _sumo_rows(model, feat, resp, theta, trunc: SumoTruncation, rng: Rng,
               with_grad: bool):
    """Per-row SUMO estimates; rows with equal counts are batched."""
    m = feat.shape[0]
    counts = trunc.sample(rng.stream(Purpose.LEVEL_DRAW), m)
    values = np.empty(m)
    gvecs = np.empty((m, model.dim_theta)) if with_grad else None
    cost = 0
    for kc in np.unique(counts):
        rows = np.nonzero(counts == kc)[0]
        stream = rng.stream(Purpose.INNER_SAMPLE, level=int(kc))
        lw, grads = draw_log_weight_rows(model, feat[rows], resp[rows], theta,
                                         int(kc), stream, with_grad=with_grad)
        cost += lw.size
        bounds, gbounds = _prefix_bounds(lw, grads)
        inv_p = 1.0 / trunc.survival(np.arange(1, kc + 1))
        diffs = np.diff(bounds, axis=1, prepend=0.0)
        values[rows] = diffs @ inv_p
        if with_grad:
            gdiffs = np.diff(gbounds, axis=1, prepend=0.0)
            gvecs[rows] = np.einsum("mkd,k->md", gdiffs, inv_p)
    return values, gvecs, int(cost), counts


def sumo_evidence(model, x, theta, trunc: SumoTruncation,
                  rng: Rng) -> EvidenceEstimate:
    """Russian-roulette estimate of the log evidence of one data point."""
    theta = model.check_theta(theta)
    feat, resp = x.features[None, ...], x.responses[None, ...]
    values, _, cost, _ = _sumo_rows(model, feat, resp, theta, trunc, rng,
                                    with_grad=False)
    return EvidenceEstimate(value=float(values[0]), inner_sample_cost=cost)


def sumo_gradient(model, x, theta, trunc: SumoTruncation,
                  rng: Rng) -> GradientEstimate:
    theta = model.check_theta(theta)
    feat, resp = x.features[None, ...], x.responses[None, ...]
    _, gvecs, cost, _ = _sumo_rows(model, feat, resp, theta, trunc, rng,
                                   with_grad=True)
    return GradientEstimate(vector=gvecs[0], inner_sample_cost=cost)


def sumo_minibatch(model, dataset, theta, trunc: SumoTruncation, m: int,
                   n_total: int, rng: Rng, with_grad: bool = False):
    """Mini-batch SUMO scaled to the full-data objective, (N/M) sum."""
    theta = model.check_theta(theta)
    feat, resp = _minibatch(dataset, m, rng.stream(Purpose.DATA_DRAW))
    values, gvecs, cost, _ = _sumo_rows(model, feat, resp, theta, trunc, rng,
                                        with_grad=with_grad)
    value = n_total * float(values.mean())
    gvec = None if gvecs is None else n_total * gvecs.mean(axis=0)
    return EvidenceEstimate(value=value, inner_sample_cost=cost), gvec


# ---------------------------------------------------------------------------
# First-order Jackknife
# ---------------------------------------------------------------------------

def _loo_logsumexp_direct(lw):
    """Leave-one-out log-sum-exp by direct recomputation, (M, K) -> (M, K)."""
    m, k = lw.shape
    tiled = np.broadcast_to(lw[:, None, :], (m, k, k)).copy()
    idx = np.arange(k)
    tiled[:, idx, idx] = -np.inf
    c = tiled.max(axis=2, keepdims=True)
    return c[:, :, 0] + np.log(np.exp(tiled - c).sum(axis=2))


def _loo_logsumexp_downdate(lw):
    """Leave-one-out log-sum-exp by subtracting one term from the total.

    The row maximum is handled by a masked recomputation since removing it
    from the shifted sum cancels catastrophically.
    """
    m, k = lw.shape
    c = lw.max(axis=1, keepdims=True)
    u = np.exp(lw - c)
    s = u.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(s - u) + c
    jmax = lw.argmax(axis=1)
    masked = lw.copy()
    masked[np.arange(m), jmax] = -np.inf
    c2 = masked.max(axis=1, keepdims=True)
    lse2 = c2[:, 0] + np.log(np.exp(masked - c2).sum(axis=1))
    out[np.arange(m), jmax] = lse2
    return out


def _loo_logsumexp(lw):
    if lw.shape[1] < JACKKNIFE_DIRECT_MAX_K:
        return _loo_logsumexp_direct(lw)
    return _loo_logsumexp_downdate(lw)


def jackknife_value(row) -> float:
    """First-order jackknife debiasing applied to one log-weight row."""
    row = np.asarray(row, dtype=float)
    k = row.size
    if k < 2:
        raise ValueError("the first-order jackknife needs k >= 2")
    lw = row[None, :]
    full = iwelbo_rows(lw)
    loo_mean = (_loo_logsumexp(lw) - np.log(k - 1)).mean(axis=1)
    return float(k * full[0] - (k - 1) * loo_mean[0])


def _jackknife_rows(model, feat, resp, theta, k: int, rng: Rng,
                    with_grad: bool):
    if k < 2:
        raise ValueError("the first-order jackknife needs k >= 2")
    stream = rng.stream(Purpose.INNER_SAMPLE, level=0)
    lw, grads = draw_log_weight_rows(model, feat, resp, theta, k, stream,
                                     with_grad=with_grad)
    full = iwelbo_rows(lw)
    loo_lse = _loo_logsumexp(lw)
    loo_mean = (loo_lse - np.log(k - 1)).mean(axis=1)
    values = k * full - (k - 1) * loo_mean
    gvecs = None
    if with_grad:
        gfull = iwelbo_gradient_rows(lw, grads)
        # mean_j of softmax-without-j gradients: weights exp(lw_i - loo_lse_j)
        expo = lw[:, None, :] - loo_lse[:, :, None]  # (M, j, i)
        np.einsum("mjj->mj", expo)[:] = -np.inf
        w_i = np.exp(expo).mean(axis=1)
        gloo = np.einsum("mi,mid->md", w_i, grads)
        gvecs = k * gfull - (k - 1) * gloo
    return values, gvecs, lw.size


def jackknife_evidence(model, x, theta, k: int, rng: Rng) -> EvidenceEstimate:
    """First-order jackknife estimate for one data point."""
    theta = model.check_theta(theta)
    feat, resp = x.features[None, ...], x.responses[None, ...]
    values, _, cost = _jackknife_rows(model, feat, resp, theta, k, rng,
                                      with_grad=False)
    return EvidenceEstimate(value=float(values[0]), inner_sample_cost=cost)


def jackknife_gradient(model, x, theta, k: int, rng: Rng) -> GradientEstimate:
    theta = model.check_theta(theta)
    feat, resp = x.features[None, ...], x.responses[None, ...]
    _, gvecs, cost = _jackknife_rows(model, feat, resp, theta, k, rng,
                                     with_grad=True)
    return GradientEstimate(vector=gvecs[0], inner_sample_cost=cost)


def jackknife_minibatch(model, dataset, theta, k: int, m: int, n_total: int,
                        rng: Rng, with_grad: bool = False):
    """Mini-batch jackknife scaled to the full-data objective."""
    theta = model.check_theta(theta)
    feat, resp = _minibatch(dataset, m, rng.stream(Purpose.DATA_DRAW))
    values, gvecs, cost = _jackknife_rows(model, feat, resp, theta, k, rng,
                                          with_grad=with_grad)
    value = n_total * float(values.mean())
    gvec = None if gvecs is None else n_total * gvecs.mean(axis=0)
    return EvidenceEstimate(value=value, inner_sample_cost=cost), gvec
