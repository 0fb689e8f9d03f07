"""Log importance weights and the importance-weighted lower bound.

The shared raw material of every estimator is a matrix of per-point inner
log weights lw[m, k] = log[p(x_m, z_mk) / q(z_mk; x_m)], optionally paired
with per-sample gradient rows g[m, k] = d/dtheta log p(x_m, z_mk).

The proposal is held fixed when differentiating: gradients flow through the
joint density only, so the gradient of the K-sample bound is the softmax of
the log weights applied to the per-sample gradients.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LogWeightRow:
    """Inner samples for one data point: log weights (K,), grads (K, dt)."""

    log_weights: np.ndarray
    grads: np.ndarray | None = None


def draw_log_weight_rows(model, feat, resp, theta, k: int, stream,
                         with_grad: bool = False, zs=None, proposal=None):
    """K inner samples per row for a mini-batch.

    Draws zs (M, K) from each row's proposal unless `zs` (with `proposal`
    means/vars (M,)) is supplied, which freezes the randomness for
    finite-difference checks.

    Returns:
        (lw (M, K), grads (M, K, dt) or None)
    """
    m = feat.shape[0]
    if zs is None:
        mean, var = model.proposal_rows(feat, resp, theta)
        eps = stream.normal((m, k))
        zs = mean[:, None] + np.sqrt(var)[:, None] * eps
    else:
        mean, var = proposal
    if with_grad:
        lj, grads = model.log_joint_and_grad_rows(feat, resp, zs, theta)
    else:
        lj, grads = model.log_joint_rows(feat, resp, zs, theta), None
    lw = lj - gaussian_logpdf_rows(zs, mean, var)
    return lw, grads


def draw_log_weights(model, x, theta, k: int, stream,
                     with_grad: bool = False) -> LogWeightRow:
    """K i.i.d. inner samples for one data point."""
    if k < 1:
        raise ValueError("need at least one inner sample")
    feat, resp = x.features[None, ...], x.responses[None, ...]
    lw, grads = draw_log_weight_rows(
        model, feat, resp, model.check_theta(theta), k, stream, with_grad
    )
    return LogWeightRow(lw[0], None if grads is None else grads[0])


def iwelbo_rows(lw: np.ndarray) -> np.ndarray:
    """Row-wise log-mean-exp with max shift, (M, K) -> (M,)."""
    c = lw.max(axis=-1, keepdims=True)
    return c[..., 0] + np.log(np.mean(np.exp(lw - c), axis=-1))


def iwelbo(row) -> float:
    """log of the average importance weight over one row."""
    row = np.asarray(row, dtype=float)
    if row.ndim != 1 or row.size < 1:
        raise ValueError("expected a nonempty 1-D log-weight row")
    return float(iwelbo_rows(row[None, :])[0])


def softmax_rows(lw: np.ndarray) -> np.ndarray:
    c = lw.max(axis=-1, keepdims=True)
    e = np.exp(lw - c)
    return e / e.sum(axis=-1, keepdims=True)


def iwelbo_gradient_rows(lw: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Softmax-weighted gradient combination, (M, K, dt) -> (M, dt)."""
    w = softmax_rows(lw)
    return np.einsum("mk,mkd->md", w, grads)


def iwelbo_gradient(row, grad_rows) -> np.ndarray:
    """Gradient of the K-sample bound for one row (proposal held fixed)."""
    row = np.asarray(row, dtype=float)
    grad_rows = np.asarray(grad_rows, dtype=float)
    if grad_rows.shape[0] != row.size:
        raise ValueError("gradient rows do not match log-weight row length")
    return iwelbo_gradient_rows(row[None, :], grad_rows[None, :, :])[0]


def gaussian_logpdf_rows(zs, mean, var):
    """log N(zs | mean, var) for zs (M, K), mean/var (M,)."""
    return -0.5 * (np.log(2.0 * np.pi * var)[:, None]
                   + (zs - mean[:, None]) ** 2 / var[:, None])
