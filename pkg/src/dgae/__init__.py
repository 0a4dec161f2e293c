"""Distributional generalized advantage estimation for on-policy agents."""

from dgae.advantage import (
    GaeParams,
    RolloutBuffer,
    Transition,
    distributional_td_error,
    dgae,
    n_step_advantage,
    normalize_advantages,
    scalar_gae,
)
from dgae.distvalue import QuantileHuberParams, bellman_target, quantile_huber_loss
from dgae.quantdist import (
    DimensionError,
    DomainError,
    QuantileDistribution,
    directional_metric,
    mean,
    midpoint_fractions,
    scale,
    shift,
    wasserstein_p,
)

__version__ = "0.1.0"
