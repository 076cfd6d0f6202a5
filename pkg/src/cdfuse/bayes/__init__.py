"""Likelihood, posteriors and the Metropolis-Hastings sampler."""
from .likelihood import TrialData, loglik, max_loglik, profile_argmax, profile_loglik
from .mcmc import MCMCConfig, PosteriorSamples, build_model, mh_sample
from .posterior import (
    delta_transform,
    exact_indep_beta_posterior,
    indep_beta_logjoint,
    kde_from_samples,
    likelihood_logjoint,
    line_log_integrals,
    marginalize_delta,
    posterior_logjoint,
    silverman_bandwidth,
)

__all__ = [
    "MCMCConfig", "PosteriorSamples", "TrialData", "build_model", "delta_transform",
    "exact_indep_beta_posterior", "indep_beta_logjoint", "kde_from_samples", "likelihood_logjoint",
    "line_log_integrals", "loglik", "marginalize_delta", "max_loglik", "mh_sample",
    "posterior_logjoint", "profile_argmax", "profile_loglik", "silverman_bandwidth",
]
