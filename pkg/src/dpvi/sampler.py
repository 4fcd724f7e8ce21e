"""Minibatch sampling without replacement from a keyed Feistel permutation.

Each iteration derives a fresh pseudo-random bijection ``f_k`` on
``[0, 2^b)`` with ``2^b > n``.  Lane ``i`` of the batch starts from ``i`` and
applies ``f_k`` until the value lands in ``[0, n)`` (cycle-walking).  Because
``f_k`` is a bijection the lanes end up pairwise distinct, and a lane needs
about two applications on average even in the worst case (``n = 2^(b-1) + 1``).

All lanes and all iterations are independent array computations, so batches for
many iterations can be produced in one vectorised call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng

__all__ = [
    "SamplerError",
    "SamplerState",
    "bit_length",
    "default_rounds",
    "round_keys",
    "feistel",
    "sample_batch",
    "sample_batches",
    "iteration_stats",
    "IterationStats",
    "oracle_sample_batch",
    "oracle_sample_batches",
    "success_probability",
    "geometric_cdf",
]

ROUNDS = 4
# rounds budget for narrow domains: 4 rounds on a few bits is visibly
# non-uniform, so small b gets more rounds (2 * ceil(48 / b), at least 4)
_ROUND_BUDGET = 48
_U64 = np.uint64
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)


class SamplerError(RuntimeError):
    """Cycle-walking failed to terminate; indicates a broken permutation."""


def bit_length(n: int) -> int:
    """Smallest ``b`` with ``2^b > n``."""
    return int(n).bit_length()


def default_rounds(b: int) -> int:
    return max(ROUNDS, 2 * -(-_ROUND_BUDGET // b))


@dataclass(frozen=True)
class SamplerState:
    """Fixed sampling setup: dataset size, batch size and root key.

    ``b`` is the smallest bit length with ``2^b > n`` and ``r = n - 2^(b-1)``.
    For ``n`` a power of two ``r`` is 0 and the walk succeeds with
    probability exactly 1/2 per step.
    """

    n: int
    batch_size: int
    root_key: rng.RngKey
    rounds: int | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("dataset size must be positive")
        if not 1 <= self.batch_size <= self.n:
            raise ValueError(f"batch size must lie in [1, {self.n}], got {self.batch_size}")
        if self.rounds is not None and self.rounds < 3:
            raise ValueError("a Feistel permutation needs more than two rounds")

    @property
    def b(self) -> int:
        return bit_length(self.n)

    @property
    def r(self) -> int:
        return self.n - (1 << (self.b - 1))

    @property
    def num_rounds(self) -> int:
        return self.rounds if self.rounds is not None else default_rounds(self.b)

    @property
    def q(self) -> float:
        return self.batch_size / self.n

    @property
    def degenerate(self) -> bool:
        # too few bits for two non-empty Feistel halves
        return self.n <= 2


def round_keys(root_key: rng.RngKey, iterations, rounds: int = ROUNDS) -> np.ndarray:
    """64-bit round keys per iteration, shape ``shape(iterations) + (rounds,)``."""
    keys = rng.split(root_key, np.asarray(iterations, dtype=np.int64))
    words = rng.bits(keys, 2 * rounds)
    return words[..., 0::2] | (words[..., 1::2] << _U64(32))


def _round_fn(h, j: int, k, width: int):
    # splitmix64-style finaliser of (half, round index, round key), top bits kept
    z = (h + _U64((_GOLDEN * (j + 1)) % 2**64)) ^ k
    z = (z ^ (z >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    z = z ^ (z >> _U64(31))
    return z >> _U64(64 - width)


def feistel(keys, b: int, x) -> np.ndarray:
    """Apply ``f_k`` to ``x`` in ``[0, 2^b)``.

    ``keys`` has shape ``(..., R)`` and broadcasts against ``x`` once its round
    axis is dropped.  The left half holds the top ``ceil(b/2)`` bits, the right
    half the low ``floor(b/2)``; rounds alternate which half is updated.
    """
    if b < 2:
        raise ValueError("Feistel network needs at least 2 bits")
    keys = np.asarray(keys, dtype=np.uint64)
    x = np.asarray(x)
    if x.size and (x.min() < 0 or x.max() >= 2**b):
        raise ValueError(f"input outside [0, 2^{b})")
    x = x.astype(np.uint64)
    wl, wr = b - b // 2, b // 2
    right = x & _U64((1 << wr) - 1)
    left = x >> _U64(wr)
    for j in range(keys.shape[-1]):
        k = keys[..., j]
        if j % 2 == 0:
            left = left ^ _round_fn(right, j, k, wl)
        else:
            right = right ^ _round_fn(left, j, k, wr)
    return ((left << _U64(wr)) | right).astype(np.int64)


def _walk(keys, b: int, n: int, start):
    """Cycle-walk every lane; returns ``(indices, applications)``.

    ``f_k`` is applied at least once, then again while the value is ``>= n``.
    """
    x = feistel(keys, b, start)
    steps = np.ones(x.shape, dtype=np.int64)
    out = x >= n
    guard = 64 * b
    while out.any():
        if steps.max() >= guard:
            raise SamplerError(f"cycle-walk exceeded {guard} steps")
        idx = np.nonzero(out)
        x[idx] = feistel(keys[idx], b, x[idx])
        steps[idx] += 1
        out[idx] = x[idx] >= n
    return x, steps


def _lanes(state: SamplerState, iterations):
    it = np.asarray(iterations, dtype=np.int64)
    rounds = state.num_rounds
    keys = round_keys(state.root_key, it, rounds)
    keys = np.broadcast_to(keys[..., None, :], it.shape + (state.batch_size, rounds))
    start = np.broadcast_to(np.arange(state.batch_size, dtype=np.int64), it.shape + (state.batch_size,))
    return _walk(keys, state.b, state.n, start)


def sample_batches(state: SamplerState, iterations) -> np.ndarray:
    """Batches for many iterations at once, shape ``shape(iterations) + (B,)``."""
    it = np.asarray(iterations, dtype=np.int64)
    if it.size and it.min() < 0:
        raise ValueError("iteration index must be non-negative")
    if state.degenerate:
        keys = rng.split(state.root_key, it)
        return oracle_sample_batches(state.n, state.batch_size, keys)
    return _lanes(state, it)[0]


def sample_batch(state: SamplerState, iteration: int) -> np.ndarray:
    """``B`` distinct indices in ``[0, n)`` for one iteration."""
    return sample_batches(state, int(iteration))


@dataclass(frozen=True)
class IterationStats:
    """Per-lane number of ``f_k`` applications ``L_i`` (failures are ``L_i - 1``)."""

    lengths: np.ndarray

    @property
    def failures(self) -> np.ndarray:
        return self.lengths - 1

    @property
    def histogram(self) -> np.ndarray:
        return np.bincount(self.lengths)

    @property
    def mean(self) -> float:
        return float(self.lengths.mean())

    def quantile(self, level: float) -> int:
        return int(np.quantile(self.lengths, level, method="inverted_cdf"))


def iteration_stats(state: SamplerState, trials: int, first: int = 0) -> IterationStats:
    """Cycle-walk lengths over ``trials`` iterations (``trials * B`` lanes)."""
    if state.degenerate:
        raise ValueError("no cycle-walking for n <= 2")
    it = np.arange(first, first + int(trials), dtype=np.int64)
    _, steps = _lanes(state, it)
    return IterationStats(steps.ravel())


def success_probability(n: int) -> float:
    """Chance that one application of ``f_k`` lands below ``n``."""
    b = bit_length(n)
    return n / 2.0**b


def geometric_cdf(n: int, f) -> np.ndarray:
    """Geometric approximation of ``Pr[F <= f]`` for the failure count ``F``."""
    return 1.0 - (1.0 - success_probability(n)) ** (np.asarray(f, dtype=np.float64) + 1.0)


def oracle_sample_batches(n: int, batch_size: int, keys: rng.RngKey) -> np.ndarray:
    """Fisher-Yates prefixes, one per key in the batch of ``keys``."""
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size must lie in [1, {n}]")
    shape = keys.batch_shape
    u = rng.uniform(keys, (batch_size,)).reshape(-1, batch_size)
    m = u.shape[0]
    perm = np.broadcast_to(np.arange(n, dtype=np.int64), (m, n)).copy()
    rows = np.arange(m)
    for i in range(batch_size):
        j = i + np.minimum((u[:, i] * (n - i)).astype(np.int64), n - i - 1)
        pi, pj = perm[rows, i].copy(), perm[rows, j].copy()
        perm[rows, i], perm[rows, j] = pj, pi
    return perm[:, :batch_size].reshape(shape + (batch_size,))


def oracle_sample_batch(n: int, batch_size: int, key: rng.RngKey) -> np.ndarray:
    """Reference sampler: sequential Fisher-Yates prefix of length ``B``."""
    return oracle_sample_batches(n, batch_size, key)
