"""Laplace approximation of a 1-D latent posterior by Newton iteration.

The proposal is the Gaussian centered at the posterior mode of z with
variance equal to the negative inverse curvature of the log joint there.
"""

import numpy as np


class LaplaceError(RuntimeError):
    """Newton iteration for the posterior mode failed to converge."""


def newton_laplace_1d(score, curvature, m: int, tol: float = 1e-12,
                      max_iter: int = 100):
    """Find roots of `score` for m independent 1-D concave problems.

    Args:
        score: z (m,) -> d/dz log joint, (m,).
        curvature: z (m,) -> d^2/dz^2 log joint, (m,), strictly negative.
        m: number of problems.
        tol: convergence threshold on the Newton step.
        max_iter: iteration cap before raising LaplaceError.

    Returns:
        (mode (m,), var (m,)) with var = -1 / curvature(mode).
    """
    z = np.zeros(m)
    active = np.ones(m, dtype=bool)
    for _ in range(max_iter):
        g = score(z)
        h = curvature(z)
        step = -g / h
        # cap the step to guard against overshoot far from the mode
        step = np.clip(step, -8.0, 8.0)
        z = np.where(active, z + step, z)
        active = active & (np.abs(step) > tol)
        if not active.any():
            break
    else:
        raise LaplaceError(
            f"posterior mode search did not converge within {max_iter} iterations"
        )
    h = curvature(z)
    if np.any(h >= 0):
        raise LaplaceError("log joint is not concave at the located mode")
    return z, -1.0 / h
