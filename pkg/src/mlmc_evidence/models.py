"""Concrete latent-variable models and synthetic datasets.

Two models ship with the library:

* RandomEffectLogisticModel: per-individual random intercept z ~ N(0, tau^2)
  with tau^2 = softplus(eta), binary responses y_t ~ Bernoulli(sigmoid(z +
  w0 + w.x_t)). Proposal via Laplace approximation. Parameters
  theta = (eta, w0, w_1..w_D), all unconstrained.

* ConjugateGaussianModel: scalar z ~ N(mu0, tau0^2), x ~ N(z, sig^2), with
  theta = (mu0, log tau0^2, log sig^2). The marginal x ~ N(mu0, tau0^2 +
  sig^2) is closed form, which makes this model the unbiasedness oracle:
  with the exact posterior proposal every importance weight equals the log
  evidence.
"""

import io
from dataclasses import dataclass

import numpy as np
from scipy.special import expit as sigmoid

from .model_api import LOG_2PI, DataPoint, LatentVariableModel, theta_rows
from .proposals import newton_laplace_1d
from .rng import Purpose, Rng


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


# ---------------------------------------------------------------------------
# Dataset container and CSV round trip
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """N individuals with features (N, T, D) and responses (N, T).

    The conjugate model uses T=1, D=0 with the observation stored in
    `responses`. `theta_star` and `seed` are carried for regeneration and
    error reporting against ground truth.
    """

    features: np.ndarray
    responses: np.ndarray
    theta_star: np.ndarray | None = None
    seed: int | None = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def t(self) -> int:
        return self.features.shape[1]

    @property
    def d(self) -> int:
        return self.features.shape[2]

    def point(self, i: int) -> DataPoint:
        return DataPoint(self.features[i], self.responses[i])

    def take(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.features[idx], self.responses[idx]

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["n", "t"] + [f"x{j + 1}" for j in range(self.d)] + ["y"]
        buf.write(",".join(cols) + "\n")
        for i in range(self.n):
            for t in range(self.t):
                row = [str(i), str(t)]
                row += [repr(float(v)) for v in self.features[i, t]]
                row.append(repr(float(self.responses[i, t])))
                buf.write(",".join(row) + "\n")
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def dataset_from_csv(text: str) -> Dataset:
    lines = [ln for ln in text.strip().splitlines() if ln]
    header = lines[0].split(",")
    d = len(header) - 3
    rows = [ln.split(",") for ln in lines[1:]]
    n = max(int(r[0]) for r in rows) + 1
    t = max(int(r[1]) for r in rows) + 1
    feat = np.zeros((n, t, d))
    resp = np.zeros((n, t))
    for r in rows:
        i, j = int(r[0]), int(r[1])
        feat[i, j] = [float(v) for v in r[2:2 + d]]
        resp[i, j] = float(r[2 + d])
    return Dataset(features=feat, responses=resp)


def read_dataset_csv(path) -> Dataset:
    with open(path) as fh:
        return dataset_from_csv(fh.read())


# ---------------------------------------------------------------------------
# Random effect logistic regression
# ---------------------------------------------------------------------------

class RandomEffectLogisticModel(LatentVariableModel):
    """Random-intercept logistic regression with D features, T repeats."""

    def __init__(self, d: int, t: int):
        self.d = int(d)
        self.t = int(t)
        self.dim_theta = self.d + 2
        self.name = "relogit"

    def _unpack(self, th):
        # th: (M, dim_theta) -> eta (M,1), w0 (M,1), w (M,D)
        return th[:, 0:1], th[:, 1:2], th[:, 2:]

    def _logits(self, feat, zs, th):
        eta, w0, w = self._unpack(th)
        lin = w0[:, :, None] + np.einsum("mtd,md->mt", feat, w)[:, None, :]
        return zs[:, :, None] + lin  # (M, K, T)

    def log_joint_rows(self, feat, resp, zs, theta):
        m = feat.shape[0]
        th = theta_rows(theta, m)
        eta, _, _ = self._unpack(th)
        tau2 = softplus(eta)  # (M, 1)
        a = self._logits(feat, zs, th)
        y = resp[:, None, :]
        # y*log(sig(a)) + (1-y)*log(1-sig(a)) = -softplus(-a) - (1-y)*a
        bern = -(softplus(-a) + (1.0 - y) * a).sum(axis=2)
        prior = -0.5 * (LOG_2PI + np.log(tau2) + zs**2 / tau2)
        return prior + bern

    def grad_log_joint_rows(self, feat, resp, zs, theta):
        m, k = zs.shape
        th = theta_rows(theta, m)
        eta, _, _ = self._unpack(th)
        tau2 = softplus(eta)
        dtau2 = sigmoid(eta)  # d tau^2 / d eta
        g = np.empty((m, k, self.dim_theta))
        g[:, :, 0] = (zs**2 / (2.0 * tau2**2) - 0.5 / tau2) * dtau2
        a = self._logits(feat, zs, th)
        r = resp[:, None, :] - sigmoid(a)  # (M, K, T)
        g[:, :, 1] = r.sum(axis=2)
        g[:, :, 2:] = np.einsum("mkt,mtd->mkd", r, feat)
        return g

    def log_joint_and_grad_rows(self, feat, resp, zs, theta):
        m, k = zs.shape
        th = theta_rows(theta, m)
        eta, _, _ = self._unpack(th)
        tau2 = softplus(eta)
        a = self._logits(feat, zs, th)
        y = resp[:, None, :]
        bern = -(softplus(-a) + (1.0 - y) * a).sum(axis=2)
        lj = -0.5 * (LOG_2PI + np.log(tau2) + zs**2 / tau2) + bern
        g = np.empty((m, k, self.dim_theta))
        g[:, :, 0] = (zs**2 / (2.0 * tau2**2) - 0.5 / tau2) * sigmoid(eta)
        r = y - sigmoid(a)
        g[:, :, 1] = r.sum(axis=2)
        g[:, :, 2:] = np.einsum("mkt,mtd->mkd", r, feat)
        return lj, g

    def proposal_rows(self, feat, resp, theta):
        m = feat.shape[0]
        th = theta_rows(theta, m)
        eta, w0, w = self._unpack(th)
        tau2 = softplus(eta)[:, 0]
        lin = w0[:, 0:1] + np.einsum("mtd,md->mt", feat, w)  # (M, T)
        y = resp

        def score(z):
            return -z / tau2 + (y - sigmoid(z[:, None] + lin)).sum(axis=1)

        def curvature(z):
            p = sigmoid(z[:, None] + lin)
            return -1.0 / tau2 - (p * (1.0 - p)).sum(axis=1)

        return newton_laplace_1d(score, curvature, m)


def generate_relogit_data(n: int, t: int, theta_star, seed: int) -> Dataset:
    """Synthetic random-effect logistic data.

    Per individual: features ~ N(0, I), z ~ N(0, softplus(eta)),
    y_t ~ Bernoulli(sigmoid(z + w0 + w.x_t)). Each individual draws from
    its own derived stream, so a dataset is a prefix of any larger one
    with the same seed.
    """
    theta_star = np.asarray(theta_star, dtype=float)
    d = theta_star.size - 2
    if n < 1 or t < 1 or d < 0:
        raise ValueError("need n >= 1, t >= 1 and theta with at least 2 entries")
    eta, w0, w = theta_star[0], theta_star[1], theta_star[2:]
    tau = float(np.sqrt(softplus(eta)))
    rng = Rng(seed)
    feat = np.empty((n, t, d))
    resp = np.empty((n, t))
    for i in range(n):
        s = rng.stream(Purpose.DATA_DRAW, level=0, index=i)
        x = s.normal((t, d))
        z = tau * s.normal()
        p = sigmoid(z + w0 + x @ w)
        y = (s.uniform(t) < p).astype(float)
        feat[i] = x
        resp[i] = y
    return Dataset(features=feat, responses=resp, theta_star=theta_star, seed=seed)


# ---------------------------------------------------------------------------
# Conjugate Gaussian model
# ---------------------------------------------------------------------------

class ConjugateGaussianModel(LatentVariableModel):
    """Scalar Gaussian prior and Gaussian likelihood with analytic evidence.

    theta = (mu0, log tau0^2, log sig^2). `build_proposal` returns the exact
    posterior of z given x; passing `fixed_proposal=(mean, var)` overrides it
    with a deliberately mismatched Gaussian, which is how the estimator
    unbiasedness tests create nonzero importance-weight variance.
    """

    dim_theta = 3
    name = "conjugate"

    def __init__(self, fixed_proposal=None):
        self.fixed_proposal = fixed_proposal

    @staticmethod
    def _unpack(th):
        return th[:, 0], np.exp(th[:, 1]), np.exp(th[:, 2])

    def log_joint_rows(self, feat, resp, zs, theta):
        m = resp.shape[0]
        th = theta_rows(theta, m)
        mu0, tau2, sig2 = self._unpack(th)
        x = resp[:, 0:1]
        prior = -0.5 * (LOG_2PI + np.log(tau2)[:, None] + (zs - mu0[:, None]) ** 2 / tau2[:, None])
        lik = -0.5 * (LOG_2PI + np.log(sig2)[:, None] + (x - zs) ** 2 / sig2[:, None])
        return prior + lik

    def grad_log_joint_rows(self, feat, resp, zs, theta):
        m, k = zs.shape
        th = theta_rows(theta, m)
        mu0, tau2, sig2 = self._unpack(th)
        x = resp[:, 0:1]
        g = np.empty((m, k, 3))
        g[:, :, 0] = (zs - mu0[:, None]) / tau2[:, None]
        g[:, :, 1] = 0.5 * ((zs - mu0[:, None]) ** 2 / tau2[:, None] - 1.0)
        g[:, :, 2] = 0.5 * ((x - zs) ** 2 / sig2[:, None] - 1.0)
        return g

    def proposal_rows(self, feat, resp, theta):
        m = resp.shape[0]
        if self.fixed_proposal is not None:
            mean, var = self.fixed_proposal
            return np.full(m, float(mean)), np.full(m, float(var))
        th = theta_rows(theta, m)
        mu0, tau2, sig2 = self._unpack(th)
        x = resp[:, 0]
        v = 1.0 / (1.0 / tau2 + 1.0 / sig2)
        mean = v * (mu0 / tau2 + x / sig2)
        return mean, v

    def log_evidence(self, x, theta) -> float:
        """log N(x | mu0, tau0^2 + sig^2), exact."""
        theta = self.check_theta(theta)
        mu0, tau2, sig2 = theta[0], np.exp(theta[1]), np.exp(theta[2])
        v = tau2 + sig2
        return float(-0.5 * (LOG_2PI + np.log(v) + (float(x) - mu0) ** 2 / v))

    def log_evidence_rows(self, resp, theta) -> np.ndarray:
        m = resp.shape[0]
        th = theta_rows(theta, m)
        mu0, tau2, sig2 = self._unpack(th)
        v = tau2 + sig2
        return -0.5 * (LOG_2PI + np.log(v) + (resp[:, 0] - mu0) ** 2 / v)


def conjugate_log_evidence(model: ConjugateGaussianModel, x, theta) -> float:
    return model.log_evidence(x, theta)


def conjugate_bayesian_log_evidence(xs, theta, prior_mean: float,
                                    prior_std: float) -> float:
    """log of the marginal of x_1..x_N when mu0 itself is N(m_p, s_p^2).

    Each x_i ~ N(mu0, v) with v = tau0^2 + sig^2; integrating mu0 out is a
    Gaussian integral with a closed form. Used as the oracle for the
    Bayesian lower-bound tests.
    """
    xs = np.asarray(xs, dtype=float)
    theta = np.asarray(theta, dtype=float)
    v = float(np.exp(theta[1]) + np.exp(theta[2]))
    n = xs.size
    sp2 = prior_std**2
    lam = 1.0 / sp2 + n / v
    mu_post = (prior_mean / sp2 + xs.sum() / v) / lam
    quad = (xs**2).sum() / v + prior_mean**2 / sp2 - lam * mu_post**2
    return float(
        -0.5 * n * (LOG_2PI + np.log(v))
        - 0.5 * np.log(sp2 * lam)
        - 0.5 * quad
    )


def generate_conjugate_data(n: int, theta_star, seed: int) -> Dataset:
    """n observations x ~ N(mu0, tau0^2 + sig^2), stored with T=1, D=0."""
    theta_star = np.asarray(theta_star, dtype=float)
    mu0, tau2, sig2 = theta_star[0], np.exp(theta_star[1]), np.exp(theta_star[2])
    rng = Rng(seed)
    resp = np.empty((n, 1))
    for i in range(n):
        s = rng.stream(Purpose.DATA_DRAW, level=0, index=i)
        z = mu0 + np.sqrt(tau2) * s.normal()
        resp[i, 0] = z + np.sqrt(sig2) * s.normal()
    return Dataset(
        features=np.zeros((n, 1, 0)),
        responses=resp,
        theta_star=theta_star,
        seed=seed,
    )
