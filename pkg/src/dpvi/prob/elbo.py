"""Single-sample reparameterised ELBO, per record and per batch.

One draw ``theta ~ q(.|psi)`` is shared by every record in the batch.  Record
``i`` contributes

    l_i = log p(x_i | theta) + (log p(theta) - log q(theta | psi)) / N

so ``(N / B) * sum_i l_i`` is an unbiased estimate of the full-data ELBO and
clipping ``grad l_i`` bounds everything record ``i`` influences.
"""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from .. import rng
from .distributions import _HALF_LOG_2PI
from .guide import GuideParams, constrain, lane_sum
from .models import ModelSpec, _free_shape


class DivergenceError(FloatingPointError):
    """The ELBO or its gradient became non-finite."""


def noise_shapes(model: ModelSpec) -> dict:
    shapes = {s.name: _free_shape(s) for s in model.sites}
    shapes.update(model.aux)
    return shapes


def noise_size(model: ModelSpec) -> int:
    return int(sum(np.prod(s, dtype=np.int64) for s in noise_shapes(model).values()))


def unpack_noise(model: ModelSpec, flat) -> dict:
    """Split a flat standard-normal vector into the per-site noise arrays."""
    flat = np.asarray(flat, dtype=np.float64)
    out, i = {}, 0
    for name, shape in noise_shapes(model).items():
        n = int(np.prod(shape, dtype=np.int64))
        out[name] = flat[i:i + n].reshape(shape)
        i += n
    if i != flat.size:
        raise ValueError(f"noise vector has {flat.size} entries, model needs {i}")
    return out


def draw_noise(model: ModelSpec, key) -> dict:
    return unpack_noise(model, rng.normal(key, (noise_size(model),)))


def _build(model: ModelSpec, psi: GuideParams, batch, n_total: int, noise: dict, lanes):
    tape = ad.Tape(lanes)
    leaves = {name: tape.var(psi[name][None]) for name in psi}
    theta = {}
    global_term = 0.0
    for s in model.sites:
        eps = noise[s.name][None]
        scale_log = leaves[f"{s.name}_scale_log"]
        z = leaves[f"{s.name}_loc"] + ad.exp(scale_log) * eps
        value, log_value, log_det = constrain(z, s.transform)
        theta[s.name] = value
        if log_value is not None:
            theta["log_" + s.name] = log_value
        # log q(z) at z = loc + scale * eps, i.e. log N(eps; 0, 1) - log scale
        log_q = lane_sum(-0.5 * eps * eps - _HALF_LOG_2PI) - lane_sum(scale_log)
        global_term = global_term + log_det - log_q
    for name in model.aux:
        theta[name] = noise[name][None]
    global_term = global_term + model.log_prior(theta)
    per_record = model.log_lik(theta, batch) + global_term / float(n_total)
    return tape, leaves, per_record


def _check(values, grads):
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(grads))):
        raise DivergenceError("non-finite ELBO or gradient")


def _flat_grads(grads, lead):
    if not grads:
        return np.zeros(lead + (0,))
    return np.concatenate([g.reshape(lead + (-1,)) for g in grads], axis=-1)


def per_example_elbo(model: ModelSpec, psi: GuideParams, batch, n_total: int, key=None, *, noise=None):
    """Per-record ELBO terms and their gradients w.r.t. the flattened ``psi``.

    Returns ``(values, grads)`` with shapes ``(B,)`` and ``(B, psi.size)``.
    Pass either ``key`` (noise drawn here) or pre-drawn ``noise``.
    """
    if noise is None:
        noise = draw_noise(model, key)
    b = _batch_size(batch)
    tape, leaves, per_record = _build(model, psi, batch, n_total, noise, lanes=b)
    root = per_record if isinstance(per_record, ad.Node) else None
    values = np.broadcast_to(ad._val(per_record), (b,)).astype(np.float64)
    if root is None or not tape.inputs:
        grads = np.zeros((b, psi.size))
    else:
        grads = _flat_grads(ad.backward(tape, root), (b,))
    _check(values, grads)
    return values, grads


def batch_elbo(model: ModelSpec, psi: GuideParams, batch, n_total: int, key=None, *, noise=None):
    """``(N/B) * sum_i l_i`` and its gradient, without per-record gradients."""
    if noise is None:
        noise = draw_noise(model, key)
    b = _batch_size(batch)
    tape, leaves, per_record = _build(model, psi, batch, n_total, noise, lanes=None)
    scale = n_total / b
    if isinstance(per_record, ad.Node):
        total = ad.sum(per_record * scale, axis=0)
        grads = _flat_grads(ad.backward(tape, total), ())
        value = float(total.value)
    else:
        value = float(np.sum(per_record) * scale)
        grads = np.zeros(psi.size)
    _check(value, grads)
    return value, grads


def _batch_size(batch) -> int:
    for v in batch.values():
        return int(np.shape(v)[0])
    raise ValueError("empty batch")
