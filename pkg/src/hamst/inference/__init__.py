"""Posterior sampling, eta3 annealing and hyperparameter search."""
from .priors import (
    LONG_RUN_SETTINGS,
    PRESETS,
    McmcSettings,
    PriorConfig,
    log_prior,
    sample_prior,
    to_constrained,
    to_unconstrained,
    unconstrained_of,
)
from .sampler import (
    Chain,
    ChainState,
    SamplerError,
    Workspace,
    latent_precision,
    moment_init,
    partition_conditional,
    run_mcmc,
    sigma2_conditional,
    sweep,
    update_alpha_star,
    update_beta_star,
    update_eta,
    update_latent_0,
    update_latent_t,
    update_sigma2,
    update_sigma_p,
    update_sigma_theta,
)
from .annealing import AnnealSchedule, Eta3Objective, OptimizationError, eta3_objective, sa_eta3_mle
from .modes import ModeResult, mode_search
from .crossval import CvResult, cv_hyperparam_search
