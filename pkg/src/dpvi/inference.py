"""Differentially private variational inference.

One update draws a shared reparameterisation sample, computes per-record
ELBO gradients, clips each to L2 norm ``C``, sums them, adds Gaussian noise of
std ``C * sigma`` to the sum and rescales by ``N / B`` before an Adam step.

Randomness for iteration ``t`` comes from ``split(state.rng, t)`` only, so a
run is a pure function of its inputs, and ``fit`` (which draws noise for many
iterations at once) reproduces a sequence of ``update`` calls bit for bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import accountant
from . import autodiff as ad
from . import rng
from . import sampler as smp
from .prob.elbo import DivergenceError, batch_elbo, noise_size, per_example_elbo, unpack_noise
from .prob.guide import GuideParams
from .prob.models import ModelSpec

__all__ = [
    "DpviConfig",
    "DpviState",
    "DivergenceError",
    "clip",
    "clip_rows",
    "perturb",
    "adam_step",
    "init",
    "update",
    "fit",
    "get_params",
    "spent_privacy",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_VERSION = 1
_THETA_STREAM = 0
_DP_STREAM = 1


@dataclass(frozen=True)
class DpviConfig:
    """Training hyper-parameters.

    ``clip_bound`` may be ``inf`` (no clipping).  ``noise_multiplier`` 0 is only
    accepted with ``private=False``; non-private training skips clipping and
    noise altogether and uses the plain minibatch gradient.
    """

    batch_size: int
    data_size: int
    clip_bound: float = 1.0
    noise_multiplier: float = 1.0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    optimizer: str = "adam"
    private: bool = True

    def __post_init__(self):
        if not 1 <= self.batch_size <= self.data_size:
            raise ValueError(f"need 1 <= batch_size <= data_size, got {self.batch_size}, {self.data_size}")
        if not self.clip_bound > 0:
            raise ValueError("clip_bound must be positive")
        if self.noise_multiplier < 0:
            raise ValueError("noise_multiplier must be nonnegative")
        if self.private and self.noise_multiplier == 0:
            raise ValueError("noise_multiplier 0 requires private=False")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ValueError("invalid Adam constants")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def q(self) -> float:
        return self.batch_size / self.data_size

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DpviState:
    iteration: int
    psi: GuideParams
    adam_m: np.ndarray
    adam_v: np.ndarray
    rng: rng.RngKey
    meta: dict = field(default_factory=dict, compare=False)


def clip(g, C: float) -> np.ndarray:
    """Scale ``g`` by ``min(1, C / ||g||_2)``."""
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.sqrt(np.dot(g.ravel(), g.ravel())))
    if norm <= C:
        return g.copy()
    return g * (C / norm)


def clip_rows(grads: np.ndarray, C: float) -> np.ndarray:
    """Row-wise :func:`clip` for a ``(B, P)`` array of per-record gradients."""
    if math.isinf(C):
        return grads
    norms = np.sqrt(np.einsum("ij,ij->i", grads, grads))
    factor = np.minimum(1.0, C / np.maximum(norms, np.finfo(np.float64).tiny))
    return grads * factor[:, None]


def perturb(gsum, C: float, sigma: float, key: rng.RngKey = None, *, z=None) -> np.ndarray:
    """``gsum + C * sigma * z`` with ``z`` standard normal per coordinate."""
    gsum = np.asarray(gsum, dtype=np.float64)
    if sigma == 0:
        return gsum.copy()
    if z is None:
        z = rng.normal(key, gsum.shape)
    return gsum + (C * sigma) * z


def adam_step(m, v, g, t: int, cfg: DpviConfig):
    """Moments and parameter change for loss gradient ``g`` at step ``t >= 1``."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    if cfg.optimizer == "sgd":
        return m, v, -cfg.learning_rate * g
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    m = b1 * m + (1.0 - b1) * g
    v = b2 * v + (1.0 - b2) * (g * g)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    return m, v, -cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)


def init(key: rng.RngKey, model: ModelSpec, cfg: DpviConfig) -> DpviState:
    """Initial state: model-declared locations, zero log-scales and moments."""
    if not isinstance(cfg, DpviConfig):
        raise TypeError("cfg must be a DpviConfig")
    psi = model.init_params(rng.split(key, 0))
    zeros = np.zeros(psi.size)
    return DpviState(0, psi, zeros, zeros.copy(), rng.split(key, 1))


def get_params(state: DpviState) -> dict:
    """Guide parameters mapped through their constraint transforms."""
    return state.psi.constrained()


def spent_privacy(cfg: DpviConfig, iterations: int, delta: float) -> float:
    """Epsilon spent after ``iterations`` updates at the given ``delta``."""
    if not cfg.private:
        return math.inf
    if iterations == 0:
        return 0.0
    return accountant.epsilon(cfg.noise_multiplier, cfg.q, iterations, delta)


def _iteration_keys(state_key, t):
    k = rng.split(state_key, t)
    return rng.split(k, _THETA_STREAM), rng.split(k, _DP_STREAM)


def private_gradient(model, psi, batch, cfg: DpviConfig, noise: dict, z):
    """Noisy full-data ELBO gradient estimate and the per-record ELBO values.

    Only the clipped sum ever meets the noise; nothing else crosses records.
    """
    values, grads = per_example_elbo(model, psi, batch, cfg.data_size, noise=noise)
    gsum = clip_rows(grads, cfg.clip_bound).sum(axis=0)
    noisy = perturb(gsum, cfg.clip_bound, cfg.noise_multiplier, z=z)
    return noisy * (cfg.data_size / cfg.batch_size), values


def _step(state: DpviState, batch, cfg: DpviConfig, model: ModelSpec, noise_flat, z):
    t = state.iteration
    noise = unpack_noise(model, noise_flat)
    scale = cfg.data_size / cfg.batch_size
    try:
        if cfg.private:
            grad, values = private_gradient(model, state.psi, batch, cfg, noise, z)
            loss = -scale * float(np.sum(values))
        else:
            value, grad = batch_elbo(model, state.psi, batch, cfg.data_size, noise=noise)
            loss = -value
    except (DivergenceError, ad.DomainError) as exc:
        raise DivergenceError(f"iteration {t}: {exc}") from exc
    if not (math.isfinite(loss) and np.isfinite(grad).all()):
        raise DivergenceError(f"iteration {t}: non-finite loss {loss!r}")
    # ascent on the ELBO is descent on the loss
    m, v, delta = adam_step(state.adam_m, state.adam_v, -grad, t + 1, cfg)
    psi = state.psi.unflatten(state.psi.flatten() + delta)
    return DpviState(t + 1, psi, m, v, state.rng, state.meta), loss


def update(state: DpviState, batch, cfg: DpviConfig, model: ModelSpec):
    """One training step; returns ``(new_state, loss)``.

    ``batch`` maps field names to arrays with ``B`` rows.  The loss is the
    negated minibatch estimate of the full-data ELBO.
    """
    b = len(next(iter(batch.values())))
    if b != cfg.batch_size:
        raise ValueError(f"batch has {b} records, config says {cfg.batch_size}")
    k_theta, k_dp = _iteration_keys(state.rng, state.iteration)
    noise_flat = rng.normal(k_theta, (noise_size(model),))
    z = rng.normal(k_dp, (state.psi.size,)) if cfg.private else None
    return _step(state, batch, cfg, model, noise_flat, z)


def _take(data: dict, idx) -> dict:
    return {name: arr[idx] for name, arr in data.items()}


def fit(
    state: DpviState,
    data: dict,
    cfg: DpviConfig,
    model: ModelSpec,
    sampler_state: smp.SamplerState,
    num_iters: int,
    callback: Callable | None = None,
    chunk: int = 512,
):
    """Run ``num_iters`` updates with Feistel-sampled minibatches.

    Noise and batch indices are generated ``chunk`` iterations at a time; the
    values equal those ``update`` would draw.  ``callback(state, loss)`` runs
    after every step.  Returns ``(state, losses)``.
    """
    if sampler_state.n != cfg.data_size or sampler_state.batch_size != cfg.batch_size:
        raise ValueError("sampler and config disagree on N or B")
    data = {name: np.asarray(arr) for name, arr in data.items()}
    p = state.psi.size
    ns = noise_size(model)
    losses = np.empty(num_iters)
    done = 0
    while done < num_iters:
        m = min(chunk, num_iters - done)
        its = np.arange(state.iteration, state.iteration + m, dtype=np.int64)
        idx = smp.sample_batches(sampler_state, its)
        keys = rng.split(state.rng, its)
        theta = rng.normal(rng.split(keys, _THETA_STREAM), (ns,))
        zs = rng.normal(rng.split(keys, _DP_STREAM), (p,)) if cfg.private else [None] * m
        for j in range(m):
            state, loss = _step(state, _take(data, idx[j]), cfg, model, theta[j], zs[j])
            losses[done + j] = loss
            if callback is not None:
                callback(state, loss)
        done += m
    return state, losses


def save_checkpoint(state: DpviState, path) -> None:
    """JSON dump that restores the state exactly (floats round-trip via repr)."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "psi": state.psi.to_dict(),
        "adam_m": state.adam_m.tolist(),
        "adam_v": state.adam_v.tolist(),
        "rng": state.rng.to_list(),
        "meta": state.meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> DpviState:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    return DpviState(
        int(doc["iteration"]),
        GuideParams.from_dict(doc["psi"]),
        np.array(doc["adam_m"], dtype=np.float64),
        np.array(doc["adam_v"], dtype=np.float64),
        rng.RngKey(doc["rng"]),
        doc.get("meta", {}),
    )

