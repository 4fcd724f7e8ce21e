"""Distributions, guides, models and the reparameterised ELBO."""

from .distributions import (
    Bernoulli,
    Categorical,
    DiagMultivariateNormal,
    Dirichlet,
    GaussianMixture,
    InverseGamma,
    Normal,
)
from .elbo import DivergenceError, batch_elbo, draw_noise, noise_size, per_example_elbo, unpack_noise
from .guide import GuideParams, Param, constrain
from .models import (
    ModelSpec,
    Site,
    build_models,
    gmm_model,
    gmm_point_estimate,
    hlr_model,
    logreg_model,
    posterior_predictive_w,
)


def gmm_log_prob(pis, locs, scales, x):
    """Log density of ``x`` (..., D) under a spherical mixture, labels summed out."""
    return GaussianMixture(pis=pis, locs=locs, scales=scales).log_prob(x)


def log_prob(dist, value):
    return dist.log_prob(value)


def sample(dist, key, sample_shape=()):
    return dist.sample(key, sample_shape)
