"""Minibatches from a keyed Feistel permutation.

Each iteration gets its own bijection on [0, 2^b).  Lane i starts at i and
keeps applying it until the value lands inside the data set, so the lanes
never collide and no shuffle of the full index set is needed.

    python demos/sampler_walk.py
"""

import numpy as np

from dpvi import rng
from dpvi import sampler as smp

state = smp.SamplerState(n=10, batch_size=4, root_key=rng.key(0))
print(f"n={state.n}: b={state.b}, r={state.r}, rounds={state.num_rounds}")
for it in range(5):
    print(f"  iteration {it}: {smp.sample_batch(state, it)}")

# walk lengths in the worst case, n just above a power of two
worst = smp.SamplerState(n=2**19 + 1, batch_size=128, root_key=rng.key(1))
st = smp.iteration_stats(worst, 1000)
print(f"\nn = 2^19 + 1: mean applications {st.mean:.3f}, 99th percentile {st.quantile(0.99)}")
print("histogram of walk lengths:", st.histogram[1:10].tolist())

# the naive reference sampler draws the same kind of batch, sequentially
print("\nFisher-Yates prefix:", smp.oracle_sample_batch(10, 4, rng.key(2)))
big = smp.sample_batches(state, np.arange(20_000))
print("index frequencies over 20000 batches:", np.round(np.bincount(big.ravel()) / big.size, 3))
