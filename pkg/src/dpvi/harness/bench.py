"""Timing benchmarks: batch size vs. time per iteration, and sampler cost."""

from __future__ import annotations

import gc
import time

import numpy as np

from .. import inference as inf
from .. import rng
from .. import sampler as smp
from ..prob.models import hlr_model
from . import data as datagen

BATCH_SIZES = (32, 64, 128, 256, 512)


def _make_cell(ds, model, b, mode, n, seed):
    if mode == "dp":
        cfg = inf.DpviConfig(batch_size=b, data_size=n, clip_bound=2.0, noise_multiplier=1.0,
                             learning_rate=1e-2)
    else:
        cfg = inf.DpviConfig(batch_size=b, data_size=n, clip_bound=float("inf"),
                             noise_multiplier=0.0, learning_rate=1e-2, private=False)
    root = rng.key(seed)
    state = inf.init(rng.split(root, 0), model, cfg)
    sstate = smp.SamplerState(n, b, rng.split(root, 1))
    return {"cfg": cfg, "state": state, "sampler": sstate}


def _step(cell, train, model, t):
    idx = smp.sample_batch(cell["sampler"], t)
    batch = {k: v[idx] for k, v in train.items()}
    t0 = time.perf_counter()
    cell["state"], _ = inf.update(cell["state"], batch, cell["cfg"], model)
    return time.perf_counter() - t0


def bench_batch_size(batch_sizes=BATCH_SIZES, iters: int = 100, n: int = 4096, seed: int = 0,
                     warmup: int = 5) -> list:
    """Mean and standard error of seconds per ``update`` on HLR data.

    Rows ``{"B", "mode", "mean", "stderr"}`` with mode ``dp`` or ``nondp``;
    each cell averages ``iters`` timed iterations after ``warmup`` untimed ones.
    Cells are timed round-robin (one update each per round) with the garbage
    collector paused, so slow phases of the machine hit all cells alike.
    """
    ds = datagen.gen_hlr_data(n, seed)
    model = hlr_model(ds.g, datagen.HLR_D)
    train = ds.train()
    keys = [(b, mode) for b in batch_sizes for mode in ("dp", "nondp")]
    cells = {k: _make_cell(ds, model, k[0], k[1], n, seed) for k in keys}
    times = {k: np.empty(iters) for k in keys}
    for t in range(warmup):
        for k in keys:
            _step(cells[k], train, model, t)
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for t in range(iters):
            for k in keys:
                times[k][t] = _step(cells[k], train, model, warmup + t)
    finally:
        if was_enabled:
            gc.enable()
    return [
        {"B": b, "mode": mode, "mean": float(times[(b, mode)].mean()),
         "stderr": float(times[(b, mode)].std(ddof=1) / np.sqrt(iters))}
        for b, mode in keys
    ]


def linear_fit_r2(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = np.sum((y - y.mean()) ** 2)
    return float(1.0 - np.sum(resid**2) / ss_tot) if ss_tot > 0 else 1.0


def bench_sampler(sizes=((5, 2), (1000, 100), (2**19 + 1, 128)), iterations: int = 1000,
                  seed: int = 0) -> list:
    """Cycle-walk statistics and wall time per batch for several ``(n, B)``."""
    rows = []
    for n, b in sizes:
        state = smp.SamplerState(int(n), int(b), rng.key(seed))
        t0 = time.perf_counter_ns()
        smp.sample_batches(state, np.arange(iterations))
        wall = (time.perf_counter_ns() - t0) / iterations
        if state.degenerate:
            mean_iters, p99 = 0.0, 0
        else:
            st = smp.iteration_stats(state, iterations)
            mean_iters, p99 = st.mean, st.quantile(0.99)
        rows.append({"n": int(n), "B": int(b), "mean_iters": mean_iters, "p99_iters": p99,
                     "wall_time_ns": int(wall)})
    return rows
