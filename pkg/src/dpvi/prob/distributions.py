"""Distributions with tape-aware log densities.

Parameters and values may be plain arrays or autodiff nodes; ``log_prob``
then lands on the tape.  Prior hyper-parameters (Dirichlet concentration,
InverseGamma shape/rate) must be constants.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .. import autodiff as ad
from .. import rng

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _v(x):
    return x.value if isinstance(x, ad.Node) else np.asarray(x, dtype=np.float64)


def _const(x, name):
    if isinstance(x, ad.Node):
        raise TypeError(f"{name} must be a constant")
    return np.asarray(x, dtype=np.float64)


def _is_zero(x) -> bool:
    return not isinstance(x, ad.Node) and np.ndim(x) == 0 and float(x) == 0.0


class Normal:
    def __init__(self, loc, scale):
        if not isinstance(scale, ad.Node) and np.any(np.asarray(scale) <= 0):
            raise ValueError("Normal scale must be positive")
        self.loc = loc
        self.scale = scale

    def log_prob(self, value):
        if isinstance(self.scale, ad.Node):
            z = (value - self.loc) / self.scale
            return -0.5 * (z * z) - ad.log(self.scale) - _HALF_LOG_2PI
        # constant scale: fold the normaliser into one offset
        scale = np.asarray(self.scale, dtype=np.float64)
        z = value if _is_zero(self.loc) else value - self.loc
        return (z * z) * (-0.5 / (scale * scale)) - (np.log(scale) + _HALF_LOG_2PI)

    def sample(self, key, sample_shape=()):
        """Reparameterised draw ``loc + scale * eps``."""
        shape = tuple(sample_shape) + np.broadcast_shapes(np.shape(_v(self.loc)), np.shape(_v(self.scale)))
        eps = rng.normal(key, shape)
        return self.loc + self.scale * eps


class DiagMultivariateNormal(Normal):
    """Normal with a diagonal covariance; densities sum over the last axis."""

    def log_prob(self, value):
        return ad.sum(super().log_prob(value), axis=-1)


class Bernoulli:
    """Bernoulli given either ``probs`` or ``logits``."""

    def __init__(self, probs=None, logits=None):
        if (probs is None) == (logits is None):
            raise ValueError("pass exactly one of probs, logits")
        if probs is not None:
            p = _v(probs)
            if np.any((p < 0) | (p > 1)):
                raise ValueError("Bernoulli probability must lie in [0, 1]")
        self.probs = probs
        self.logits = logits

    def log_prob(self, value):
        y = np.asarray(value, dtype=np.float64)
        if ((y != 0) & (y != 1)).any():
            raise ValueError("Bernoulli value must be 0 or 1")
        if self.logits is not None:
            # y*z - softplus(z)
            return y * self.logits - ad.logsumexp([np.zeros_like(y), self.logits])
        if isinstance(self.probs, ad.Node):
            return y * ad.log(self.probs) + (1.0 - y) * ad.log(1.0 - self.probs)
        p = np.broadcast_to(np.asarray(self.probs, dtype=np.float64), np.broadcast_shapes(y.shape, np.shape(self.probs)))
        hit = np.where(y == 1, p, 1.0 - p)
        with np.errstate(divide="ignore"):
            return np.log(hit)

    def sample(self, key, sample_shape=()):
        p = _v(self.probs) if self.probs is not None else ad.sigmoid(_v(self.logits))
        shape = tuple(sample_shape) + np.shape(p)
        return (rng.uniform(key, shape) < p).astype(np.int64)


class Categorical:
    def __init__(self, probs):
        p = _const(probs, "Categorical probs")
        if np.any(p < 0) or not np.allclose(p.sum(-1), 1.0, atol=1e-9):
            raise ValueError("Categorical probs must lie on the simplex")
        self.probs = p

    def log_prob(self, value):
        k = np.asarray(value)
        if np.any((k < 0) | (k >= self.probs.shape[-1])) or k.dtype.kind not in "iu":
            raise ValueError("Categorical value out of support")
        with np.errstate(divide="ignore"):
            return np.log(np.take_along_axis(
                np.broadcast_to(self.probs, k.shape + self.probs.shape[-1:]), k[..., None], -1
            )[..., 0])

    def sample(self, key, sample_shape=()):
        shape = tuple(sample_shape) + self.probs.shape[:-1]
        u = rng.uniform(key, shape)
        cdf = np.cumsum(self.probs, axis=-1)
        cdf[..., -1] = 1.0
        return np.minimum((u[..., None] >= cdf).sum(-1), self.probs.shape[-1] - 1)


def _gamma(key, alpha, shape):
    """Gamma(alpha, 1) draws via Marsaglia-Tsang, boosted for alpha < 1."""
    alpha = np.broadcast_to(np.asarray(alpha, dtype=np.float64), shape)
    boost = alpha < 1
    a = np.where(boost, alpha + 1.0, alpha)
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    out = np.full(shape, np.nan)
    todo = np.ones(shape, dtype=bool)
    rnd = 0
    while todo.any():
        kr = rng.split(key, rnd)
        z = rng.normal(rng.split(kr, 0), shape)
        u = rng.uniform(rng.split(kr, 1), shape)
        v = (1.0 + c * z) ** 3
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (v > 0) & (np.log1p(-u) < 0.5 * z * z + d - d * v + d * np.log(np.where(v > 0, v, 1.0)))
        take = todo & ok
        out[take] = (d * v)[take]
        todo &= ~ok
        rnd += 1
    if boost.any():
        u = rng.uniform(rng.split(key, 2**32 + 1), shape)
        out = np.where(boost, out * (1.0 - u) ** (1.0 / np.where(boost, alpha, 1.0)), out)
    return out


class Dirichlet:
    def __init__(self, concentration):
        a = _const(concentration, "Dirichlet concentration")
        if np.any(a <= 0):
            raise ValueError("Dirichlet concentration must be positive")
        self.concentration = a
        self._norm = float(gammaln(a.sum(-1)) - gammaln(a).sum(-1))

    def log_prob(self, value):
        x = _v(value)
        if np.any(x < 0) or not np.allclose(x.sum(-1), 1.0, atol=1e-9):
            raise ValueError("Dirichlet value must lie on the simplex")
        return self.log_prob_from_log(ad.log(value))

    def log_prob_from_log(self, log_value):
        """Density given log-coordinates of a simplex point."""
        return self._norm + ad.sum((self.concentration - 1.0) * log_value, axis=-1)

    def sample(self, key, sample_shape=()):
        shape = tuple(sample_shape) + self.concentration.shape
        g = _gamma(key, self.concentration, shape)
        return g / g.sum(-1, keepdims=True)


class InverseGamma:
    def __init__(self, concentration, rate):
        a = _const(concentration, "InverseGamma concentration")
        b = _const(rate, "InverseGamma rate")
        if np.any(a <= 0) or np.any(b <= 0):
            raise ValueError("InverseGamma parameters must be positive")
        self.concentration = a
        self.rate = b

    def log_prob(self, value):
        if np.any(_v(value) <= 0):
            raise ValueError("InverseGamma value must be positive")
        a, b = self.concentration, self.rate
        return a * np.log(b) - gammaln(a) - (a + 1.0) * ad.log(value) - b / value

    def sample(self, key, sample_shape=()):
        shape = tuple(sample_shape) + np.broadcast_shapes(self.concentration.shape, self.rate.shape)
        return self.rate / _gamma(key, self.concentration, shape)


class GaussianMixture:
    """Mixture of spherical Gaussians with the component label summed out.

    ``pis`` (K,), ``locs`` (K, D), ``scales`` (K,).  Pass ``log_pis`` instead
    of ``pis`` when log-weights are already at hand.
    """

    def __init__(self, pis=None, locs=None, scales=None, log_pis=None):
        if (pis is None) == (log_pis is None):
            raise ValueError("pass exactly one of pis, log_pis")
        if pis is not None:
            p = _v(pis)
            if np.any(p < 0) or not np.allclose(p.sum(-1), 1.0, atol=1e-9):
                raise ValueError("mixture weights must lie on the simplex")
            log_pis = ad.log(pis)
        if _v(locs).shape[-2] < 1:
            raise ValueError("mixture needs at least one component")
        if np.any(_v(scales) <= 0):
            raise ValueError("mixture scales must be positive")
        self.log_pis = log_pis
        self.locs = locs
        self.scales = scales

    def component_log_prob(self, value):
        """Per-component log densities, shape ``(..., K)``."""
        x = _v(value)
        d = x.shape[-1]
        diff = x[..., None, :] - self.locs
        sq = ad.sum(diff * diff, axis=-1)
        return -0.5 * sq / (self.scales * self.scales) - d * ad.log(self.scales) - d * _HALF_LOG_2PI

    def log_prob(self, value):
        return ad.logsumexp(self.component_log_prob(value) + self.log_pis, axis=-1)

    def sample(self, key, sample_shape=()):
        pis = np.exp(_v(self.log_pis))
        pis = pis / pis.sum(-1, keepdims=True)
        z = Categorical(pis).sample(rng.split(key, 0), sample_shape)
        locs, scales = _v(self.locs), _v(self.scales)
        eps = rng.normal(rng.split(key, 1), z.shape + locs.shape[-1:])
        return locs[z] + scales[z][..., None] * eps
