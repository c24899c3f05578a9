"""Imprecise domain generalisation: one model for a continuum of risk levels.

A level-conditioned network is trained against every CVaR level at once, so
that the level can be chosen at deployment time instead of during training.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, DomainError, IDGError, NumericError  # noqa: E402
from .lambda_dist import (BetaParams, beta_cdf, beta_icdf, beta_icdf_array, icdf_fd_grad,  # noqa: E402
                          sample_crn)
from .models import (AugmentedParams, ArchitectureSpec, forward, init_params,  # noqa: E402
                     load_checkpoint, loss_gradient, save_checkpoint)
from .risk import RiskProfile, aggregate, cvar, cvar_vrex, cvar_weights  # noqa: E402

__all__ = [
    "__version__",
    "IDGError",
    "ConfigError",
    "DataError",
    "DomainError",
    "NumericError",
    "BetaParams",
    "beta_cdf",
    "beta_icdf",
    "beta_icdf_array",
    "icdf_fd_grad",
    "sample_crn",
    "ArchitectureSpec",
    "AugmentedParams",
    "init_params",
    "forward",
    "loss_gradient",
    "save_checkpoint",
    "load_checkpoint",
    "RiskProfile",
    "cvar",
    "cvar_vrex",
    "cvar_weights",
    "aggregate",
]
