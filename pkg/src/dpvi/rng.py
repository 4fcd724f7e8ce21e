"""Counter-based splittable random numbers (Philox4x32-10).

A key is an immutable array of 32-bit words.  A single key has shape ``(4,)``;
a stack of keys has shape ``(..., 4)`` and every function here broadcasts over
the leading key axes, so drawing for many iterations at once yields exactly
the values that one-at-a-time calls would produce.

Words 0-1 are the Philox key, words 2-3 fix the upper half of the counter
(the stream id).  Block ``j`` of a stream uses counter ``(j_lo, j_hi, w2, w3)``.
Splitting runs the same block function under a tweaked Philox key so child
keys never coincide with raw output blocks of the parent.

The generator is statistical, not cryptographic.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "RngKey",
    "key",
    "split",
    "bits",
    "uniform",
    "normal",
]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = 0x9E3779B9
_W1 = 0xBB67AE85
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)
_SPLIT_TWEAK = (0x243F6A88, 0x85A308D3)
_ROUNDS = 10


class RngKey:
    """Immutable (possibly batched) Philox key."""

    __slots__ = ("_words",)

    def __init__(self, words):
        w = np.array(words, dtype=np.uint64)
        if w.shape[-1:] != (4,):
            raise ValueError(f"key words must have trailing dimension 4, got {w.shape}")
        if np.any(w > _MASK32):
            raise ValueError("key words must be 32-bit")
        w.setflags(write=False)
        self._words = w

    @property
    def words(self) -> np.ndarray:
        return self._words

    @property
    def batch_shape(self) -> tuple:
        return self._words.shape[:-1]

    def __getitem__(self, idx) -> "RngKey":
        if not self.batch_shape:
            raise TypeError("cannot index a single key")
        return RngKey(self._words[idx])

    def __len__(self) -> int:
        if not self.batch_shape:
            raise TypeError("single key has no length")
        return self.batch_shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RngKey):
            return NotImplemented
        return self._words.shape == other._words.shape and bool(
            np.array_equal(self._words, other._words)
        )

    def __hash__(self) -> int:
        return hash((self._words.shape, self._words.tobytes()))

    def __repr__(self) -> str:
        if not self.batch_shape:
            return "RngKey(" + ", ".join(f"0x{int(v):08x}" for v in self._words) + ")"
        return f"RngKey(batch_shape={self.batch_shape})"

    def to_list(self) -> list:
        return self._words.tolist()


def key(seed: int) -> RngKey:
    """Root key from a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return RngKey([seed & 0xFFFFFFFF, seed >> 32, 0, 0])


def _philox(k0, k1, c0, c1, c2, c3):
    # all arguments: uint64 arrays holding 32-bit values, mutually broadcastable
    k0 = np.asarray(k0, dtype=np.uint64)
    k1 = np.asarray(k1, dtype=np.uint64)
    for _ in range(_ROUNDS):
        p0 = c0 * _M0
        p1 = c2 * _M1
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
        k0 = (k0 + np.uint64(_W0)) & _MASK32
        k1 = (k1 + np.uint64(_W1)) & _MASK32
    return c0, c1, c2, c3


def _blocks(k: RngKey, nblocks: int, tweak=(0, 0)) -> np.ndarray:
    """Raw output words, shape ``batch_shape + (nblocks, 4)``."""
    w = k.words[..., None, :]
    j = np.arange(nblocks, dtype=np.uint64)
    out = _philox(
        w[..., 0] ^ np.uint64(tweak[0]),
        w[..., 1] ^ np.uint64(tweak[1]),
        j & _MASK32,
        (j >> _SHIFT32) + np.zeros_like(w[..., 0]),
        w[..., 2],
        w[..., 3],
    )
    return np.stack(out, axis=-1)


def split(k: RngKey, index) -> RngKey:
    """Child key number ``index``; ``index`` may be an integer array.

    The result has batch shape ``broadcast(k.batch_shape, shape(index))``.
    """
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise TypeError("split index must be integral")
    if np.any(idx < 0):
        raise ValueError("split index must be non-negative")
    idx = idx.astype(np.uint64)
    w = k.words
    out = _philox(
        w[..., 0] ^ np.uint64(_SPLIT_TWEAK[0]),
        w[..., 1] ^ np.uint64(_SPLIT_TWEAK[1]),
        idx & _MASK32,
        idx >> _SHIFT32,
        w[..., 2],
        w[..., 3],
    )
    return RngKey(np.stack(np.broadcast_arrays(*out), axis=-1))


def bits(k: RngKey, n: int) -> np.ndarray:
    """``n`` raw 32-bit words per key, as uint64, shape ``batch_shape + (n,)``."""
    nblocks = -(-n // 4)
    raw = _blocks(k, nblocks)
    return raw.reshape(raw.shape[:-2] + (4 * nblocks,))[..., :n]


def _uniform_flat(k: RngKey, n: int) -> np.ndarray:
    # two 53-bit doubles per block
    nblocks = -(-n // 2)
    raw = _blocks(k, nblocks)
    hi = (raw[..., 0::2] >> np.uint64(5)).astype(np.float64)
    lo = (raw[..., 1::2] >> np.uint64(6)).astype(np.float64)
    u = (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0)
    return u.reshape(u.shape[:-2] + (2 * nblocks,))[..., :n]


def _shape(shape) -> tuple:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)


def uniform(k: RngKey, shape=()) -> np.ndarray:
    """Uniform doubles in [0, 1)."""
    shape = _shape(shape)
    n = int(np.prod(shape, dtype=np.int64))
    return _uniform_flat(k, n).reshape(k.batch_shape + shape)


def normal(k: RngKey, shape=()) -> np.ndarray:
    """Standard normal doubles via Box-Muller on consecutive uniform pairs."""
    shape = _shape(shape)
    n = int(np.prod(shape, dtype=np.int64))
    npairs = -(-n // 2)
    u = _uniform_flat(k, 2 * npairs)
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    r = np.sqrt(-2.0 * np.log1p(-u1))
    t = 2.0 * np.pi * u2
    z = np.stack([r * np.cos(t), r * np.sin(t)], axis=-1)
    z = z.reshape(z.shape[:-2] + (2 * npairs,))[..., :n]
    return z.reshape(k.batch_shape + shape)
