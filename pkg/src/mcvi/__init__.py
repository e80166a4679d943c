"""Markov chain variational inference on small models, with exact oracles."""

from .bound import (
    AnnealingSchedule,
    BoundEstimate,
    annealed_bound,
    hvi_lower_bound,
    importance_sampling_log_marginal,
    mcmc_lower_bound,
    mh_lower_bound,
    mixture_iterates_bound,
)
from .optimize import TrainConfig, mcvi_optimize, sequential_mcvi

__version__ = "0.1.0"

__all__ = [
    "AnnealingSchedule",
    "BoundEstimate",
    "TrainConfig",
    "annealed_bound",
    "hvi_lower_bound",
    "importance_sampling_log_marginal",
    "mcmc_lower_bound",
    "mcvi_optimize",
    "mh_lower_bound",
    "mixture_iterates_bound",
    "sequential_mcvi",
]
