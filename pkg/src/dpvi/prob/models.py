"""Model definitions: logistic regression, hierarchical logistic regression, GMM.

A model is a prior over named latent sites plus a per-record log-likelihood.
Every site gets a mean-field Gaussian guide on its unconstrained value with
parameters ``<site>_loc`` and ``<site>_scale_log``.

Array conventions: latent values carry a leading axis of size 1 (shared across
the batch), record arrays carry the batch on axis 0, and ``log_lik`` returns one
value per record.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from .. import rng
from .distributions import Bernoulli, Dirichlet, GaussianMixture, InverseGamma, Normal
from .guide import GuideParams, Param, lane_sum

PRIOR_SCALE = 4.0


@dataclass(frozen=True)
class Site:
    name: str
    shape: tuple
    transform: str = "identity"


@dataclass(frozen=True)
class ModelSpec:
    """``log_prior(theta)`` returns the shared prior term (leading axis 1),
    ``log_lik(theta, batch)`` one log-likelihood per record.

    ``aux`` declares standard-normal noise arrays drawn once per iteration and
    handed to both callables inside ``theta`` (used for latents that the guide
    does not cover and that are drawn from their prior conditional).
    ``init`` optionally maps a key to initial ``<site>_loc`` values.
    """

    name: str
    sites: tuple
    log_prior: Callable
    log_lik: Callable
    aux: dict = field(default_factory=dict)
    init: Callable | None = None
    meta: dict = field(default_factory=dict)

    def init_params(self, key=None) -> GuideParams:
        locs = self.init(key) if self.init is not None else {}
        entries = {}
        for s in self.sites:
            free = _free_shape(s)
            entries[f"{s.name}_loc"] = Param(np.asarray(locs.get(s.name, np.zeros(free)), dtype=np.float64),
                                             s.transform)
            entries[f"{s.name}_scale_log"] = Param(np.zeros(free), "exp")
        return GuideParams(entries)


def _free_shape(site: Site) -> tuple:
    if site.transform == "simplex":
        return site.shape[:-1] + (site.shape[-1] - 1,)
    return tuple(site.shape)


def _stack(batch, name):
    return np.asarray(batch[name], dtype=np.float64)


# -- logistic regression -----------------------------------------------------

def logreg_model(d: int) -> ModelSpec:
    """``w ~ Normal(0, 4)``, ``y_i ~ Bernoulli(sigmoid(w . x_i))``."""

    def log_prior(theta):
        return lane_sum(Normal(0.0, PRIOR_SCALE).log_prob(theta["w"]))

    def log_lik(theta, batch):
        logits = ad.dot(theta["w"], _stack(batch, "x"))
        return Bernoulli(logits=logits).log_prob(batch["y"])

    return ModelSpec("logreg", (Site("w", (d,)),), log_prior, log_lik, meta={"d": d})


# -- hierarchical logistic regression ----------------------------------------

def hlr_model(g, d: int = 5) -> ModelSpec:
    """Group weights ``w_l ~ Normal(M g_l, I)``, ``M ~ Normal(0, 4)``.

    ``g`` is the public (L, K) group matrix; records carry ``l`` (group index).
    ``w_l`` is not covered by the guide: each iteration draws it from its prior
    conditional, ``w_l = M g_l + eps_l``, so its log density enters as the
    constant ``log N(eps_l; 0, I)``.
    """
    g = np.asarray(g, dtype=np.float64)
    n_groups, k = g.shape

    def log_prior(theta):
        lp = lane_sum(Normal(0.0, PRIOR_SCALE).log_prob(theta["M"]))
        return lp + lane_sum(Normal(0.0, 1.0).log_prob(theta["ws_eps"]))

    def log_lik(theta, batch):
        groups = np.asarray(batch["l"], dtype=np.int64)
        if groups.size and (groups.min() < 0 or groups.max() >= n_groups):
            raise ValueError("group index out of range")
        eps = np.asarray(theta["ws_eps"])
        eps = eps.reshape(eps.shape[-2:])
        # (1, D, K) . (B, 1, K) -> (B, D)
        w = ad.dot(theta["M"], g[groups][:, None, :]) + eps[groups]
        logits = ad.dot(w, _stack(batch, "x"))
        return Bernoulli(logits=logits).log_prob(batch["y"])

    return ModelSpec(
        "hlr", (Site("M", (d, k)),), log_prior, log_lik,
        aux={"ws_eps": (n_groups, d)}, meta={"d": d, "g": g},
    )


def etas(m, g):
    """Group prior means ``eta_l = M g_l`` for all groups, shape (L, D)."""
    return np.asarray(g) @ np.asarray(m).T


def posterior_predictive_w(psi: GuideParams, g_l, key, num_samples: int) -> np.ndarray:
    """Draws of ``w_l`` with ``M`` integrated against the guide, shape (S, D)."""
    loc = psi["M_loc"]
    scale = np.exp(psi["M_scale_log"])
    g_l = np.asarray(g_l, dtype=np.float64)
    m = loc + scale * rng.normal(rng.split(key, 0), (num_samples,) + loc.shape)
    return m @ g_l + rng.normal(rng.split(key, 1), (num_samples, loc.shape[0]))


# -- Gaussian mixture ----------------------------------------------------------

def gmm_model(k: int = 5, d: int = 2) -> ModelSpec:
    """Spherical GMM with marginalised assignments.

    ``pis ~ Dirichlet(1)``, ``locs_j ~ Normal(0, I)``, ``sigmas_j ~ InverseGamma(1, 1)``.
    Initial component means are a prior draw so the guide starts off its
    symmetric saddle; the draw depends on the key only.
    """
    dirichlet = Dirichlet(np.ones(k))
    inv_gamma = InverseGamma(1.0, 1.0)

    def log_prior(theta):
        lp = dirichlet.log_prob_from_log(theta["log_pis"])
        lp = lp + lane_sum(Normal(0.0, 1.0).log_prob(theta["locs"]))
        return lp + lane_sum(inv_gamma.log_prob(theta["sigmas"]))

    def log_lik(theta, batch):
        mix = GaussianMixture(log_pis=theta["log_pis"], locs=theta["locs"], scales=theta["sigmas"])
        return mix.log_prob(_stack(batch, "x"))

    def init(key):
        if key is None:
            return {}
        return {"locs": rng.normal(rng.split(key, 7), (k, d))}

    return ModelSpec(
        "gmm",
        (Site("pis", (k,), "simplex"), Site("locs", (k, d)), Site("sigmas", (k,), "exp")),
        log_prior, log_lik, init=init, meta={"k": k, "d": d},
    )


def gmm_point_estimate(psi: GuideParams) -> dict:
    """Mixture parameters at the guide means, mapped to their supports."""
    c = psi.constrained()
    return {"pis": c["pis_loc"], "locs": c["locs_loc"], "sigmas": c["sigmas_loc"]}


def build_models(d: int = 5, g=None, k: int = 5, gmm_dim: int = 2) -> dict:
    if g is None:
        g = np.eye(3)
    return {
        "logreg": logreg_model(d),
        "hlr": hlr_model(g, d),
        "gmm": gmm_model(k, gmm_dim),
    }
