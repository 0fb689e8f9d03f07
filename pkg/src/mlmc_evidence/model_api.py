"""Contract every latent-variable model satisfies.

A model owns a joint density p(x, z | theta) over one data point x and its
local latent z, the gradient of its log with respect to theta, and a
per-point Gaussian proposal approximating the posterior of z given x.
Estimators are written once against this interface.

Batch layout used throughout: features (M, T, D), responses (M, T),
latent samples zs (M, K), theta either (dim_theta,) or (M, dim_theta)
for per-row parameter vectors. The shipped models use a scalar latent.
"""

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class DataPoint:
    """One individual: features (T, D) and responses (T,)."""

    features: np.ndarray
    responses: np.ndarray


@dataclass(frozen=True)
class GaussianProposal:
    """Diagonal Gaussian proposal for a single data point."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        var = np.atleast_1d(np.asarray(self.var, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)
        if mean.shape != var.shape:
            raise ValueError("proposal mean and variance shapes differ")
        if not np.all(var > 0):
            raise ValueError("proposal variance must be strictly positive")

    def sample(self, stream, k: int) -> np.ndarray:
        """k independent draws, shape (k, dz)."""
        eps = stream.normal((k, self.mean.size))
        return self.mean + np.sqrt(self.var) * eps

    def log_density(self, z) -> np.ndarray:
        """Log density at z, shape (..., dz) -> (...)."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        d = (z - self.mean) ** 2 / self.var
        return -0.5 * np.sum(LOG_2PI + np.log(self.var) + d, axis=-1)


def log_proposal_density(q: GaussianProposal, z) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape[-1] != q.mean.size:
        raise ValueError(
            f"latent dimension {z.shape[-1]} does not match proposal {q.mean.size}"
        )
    return float(q.log_density(z))


class LatentVariableModel:
    """Base class: joint density, its theta-gradient, and a proposal builder.

    Subclasses implement the `_rows` batch operations; the per-point
    operations below wrap them. All operations are pure functions of their
    arguments, safe for concurrent use.
    """

    dim_theta: int = 0
    name: str = "model"

    # -- batch operations (implemented by subclasses) --

    def log_joint_rows(self, feat, resp, zs, theta) -> np.ndarray:
        """log p(x_m, z_mk | theta) for zs of shape (M, K) -> (M, K)."""
        raise NotImplementedError

    def grad_log_joint_rows(self, feat, resp, zs, theta) -> np.ndarray:
        """d/dtheta log p(x_m, z_mk | theta) -> (M, K, dim_theta)."""
        raise NotImplementedError

    def proposal_rows(self, feat, resp, theta) -> tuple[np.ndarray, np.ndarray]:
        """Per-row proposal (mean (M,), var (M,)) for the scalar latent."""
        raise NotImplementedError

    def log_joint_and_grad_rows(self, feat, resp, zs, theta):
        """Joint values and gradients together; models may share work."""
        return (self.log_joint_rows(feat, resp, zs, theta),
                self.grad_log_joint_rows(feat, resp, zs, theta))

    # -- per-point operations --

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim_theta,):
            raise ValueError(
                f"theta has shape {theta.shape}, expected ({self.dim_theta},)"
            )
        return theta

    def _one(self, x: DataPoint):
        return x.features[None, ...], x.responses[None, ...]

    def log_joint(self, x: DataPoint, z, theta) -> float:
        """log[p(x | z) p(z)] at one point."""
        theta = self.check_theta(theta)
        feat, resp = self._one(x)
        zv = _scalar_latent(z)
        return float(self.log_joint_rows(feat, resp, np.array([[zv]]), theta)[0, 0])

    def grad_log_joint(self, x: DataPoint, z, theta) -> np.ndarray:
        """d/dtheta log[p(x | z) p(z)] at one point, shape (dim_theta,)."""
        theta = self.check_theta(theta)
        feat, resp = self._one(x)
        zv = _scalar_latent(z)
        return self.grad_log_joint_rows(feat, resp, np.array([[zv]]), theta)[0, 0]

    def build_proposal(self, x: DataPoint, theta) -> GaussianProposal:
        """Gaussian approximation of p(z | x, theta)."""
        theta = self.check_theta(theta)
        feat, resp = self._one(x)
        mean, var = self.proposal_rows(feat, resp, theta)
        return GaussianProposal(mean=mean[:1], var=var[:1])


def _scalar_latent(z) -> float:
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size != 1:
        raise ValueError(f"latent has dimension {z.size}, expected 1")
    return float(z[0])


def theta_rows(theta, m: int) -> np.ndarray:
    """Broadcast theta to (M, dim_theta) rows without copying when shared."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim == 1:
        return np.broadcast_to(theta, (m, theta.size))
    if theta.shape[0] != m:
        raise ValueError("per-row theta batch does not match row count")
    return theta
