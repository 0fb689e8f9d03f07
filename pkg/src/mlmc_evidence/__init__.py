"""Debiased log-evidence estimation by multilevel Monte Carlo.

Estimators of the log marginal likelihood of latent-variable models and of
its parameter gradient: nested Monte Carlo, coupled and randomized
multilevel Monte Carlo, SUMO, and the first-order jackknife, plus optimal
level allocation, an Adam-driven fitting loop, a Bayesian variant of the
objective, and convergence/efficiency diagnostics.
"""

from .allocation import (
    AllocationPlan,
    InsufficientPilotError,
    LevelStats,
    optimal_plan,
    pilot_levels,
    scale_to_budget,
)
from .diagnostics import (
    comparison_csv,
    comparison_table,
    decay_report,
    efficiency_csv,
    efficiency_report,
)
from .estimators import (
    EvidenceEstimate,
    GradientEstimate,
    LevelWeights,
    SumoTruncation,
    coupled_terms,
    default_level_weights,
    jackknife_evidence,
    jackknife_gradient,
    mlmc_delta,
    mlmc_evidence,
    mlmc_gradient,
    mlmc_gradient_delta,
    nmc_evidence,
    nmc_gradient,
    randomized_mlmc_evidence,
    randomized_mlmc_gradient,
    sumo_evidence,
    sumo_gradient,
)
from .lmelbo import (
    GaussianPrior,
    GaussianVariational,
    fit_bayesian,
    kl_gaussian_diag,
    lmelbo_gradient,
    lmelbo_mlmc_estimate,
)
from .model_api import DataPoint, GaussianProposal, LatentVariableModel, log_proposal_density
from .models import (
    ConjugateGaussianModel,
    Dataset,
    RandomEffectLogisticModel,
    conjugate_log_evidence,
    generate_conjugate_data,
    generate_relogit_data,
    read_dataset_csv,
)
from .optimizer import AdamConfig, AdamState, EstimatorConfig, TrainTrace, adam_step, fit
from .proposals import LaplaceError
from .rng import Purpose, RandomStream, Rng, StreamKey, child_seed, derive_stream

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
