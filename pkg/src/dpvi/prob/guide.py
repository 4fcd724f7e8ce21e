"""Variational parameters and constraint transforms."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Mapping

import numpy as np

from .. import autodiff as ad

TRANSFORMS = ("identity", "exp", "simplex")


def constrain(z, transform: str):
    """Map unconstrained ``z`` to its support.

    Returns ``(value, log_value, log_det_jacobian)`` where ``log_value`` is
    ``None`` for the identity and the Jacobian term is summed over the event
    (last) axes down to the leading axis.
    """
    if transform == "identity":
        return z, None, 0.0
    if transform == "exp":
        return ad.exp(z), z, lane_sum(z)
    if transform == "simplex":
        # last coordinate pinned to 0 for identifiability: K-1 free -> K weights
        zv = z.value if isinstance(z, ad.Node) else np.asarray(z)
        full = ad.concat([z, np.zeros(zv.shape[:-1] + (1,))], axis=-1)
        log_p = full - ad.logsumexp(full, axis=-1, keepdims=True)
        return ad.exp(log_p), log_p, lane_sum(log_p)
    raise ValueError(f"unknown transform {transform!r}")


def lane_sum(x):
    """Sum every axis but the leading one."""
    v = x.value if isinstance(x, ad.Node) else np.asarray(x)
    if v.ndim <= 1:
        return x
    return ad.sum(x, axis=tuple(range(1, v.ndim)))


@dataclass(frozen=True)
class Param:
    value: np.ndarray
    transform: str = "identity"


class GuideParams(Mapping):
    """Ordered, immutable collection of unconstrained variational parameters."""

    def __init__(self, entries: Mapping[str, Param]):
        self._entries = {}
        for name, p in entries.items():
            if p.transform not in TRANSFORMS:
                raise ValueError(f"unknown transform {p.transform!r} for {name}")
            v = np.array(p.value, dtype=np.float64)
            v.setflags(write=False)
            self._entries[name] = Param(v, p.transform)

    def __getitem__(self, name) -> np.ndarray:
        return self._entries[name].value

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def transform(self, name) -> str:
        return self._entries[name].transform

    @property
    def size(self) -> int:
        return int(sum(p.value.size for p in self._entries.values()))

    def flatten(self) -> np.ndarray:
        if not self._entries:
            return np.zeros(0)
        return np.concatenate([p.value.ravel() for p in self._entries.values()])

    def unflatten(self, vec) -> "GuideParams":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"expected vector of length {self.size}, got {vec.shape}")
        out, i = {}, 0
        for name, p in self._entries.items():
            n = p.value.size
            out[name] = Param(vec[i:i + n].reshape(p.value.shape), p.transform)
            i += n
        return GuideParams(out)

    def constrained(self) -> dict:
        """Transformed values; ``*_log`` entries under exp lose the suffix."""
        out = {}
        for name, p in self._entries.items():
            if p.transform == "identity":
                out[name] = p.value.copy()
                continue
            value = constrain(p.value[None], p.transform)[0][0]
            if p.transform == "exp" and name.endswith("_log"):
                name = name[: -len("_log")]
            out[name] = value
        return out

    def to_dict(self) -> dict:
        return {
            name: {"value": p.value.tolist(), "shape": list(p.value.shape), "transform": p.transform}
            for name, p in self._entries.items()
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GuideParams":
        return cls({
            name: Param(np.array(e["value"], dtype=np.float64).reshape(e["shape"]), e["transform"])
            for name, e in d.items()
        })

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}{tuple(p.value.shape)}" for n, p in self._entries.items())
        return f"GuideParams({inner})"
