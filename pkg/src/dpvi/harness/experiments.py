"""Experiment drivers: data -> sampler -> DP-VI -> metrics -> CSV + manifest.

CSV columns (fixed order)::

    run_id, model, seed, epsilon, sigma, iteration, elbo, auc, test_loglik, wall_time

Floats are written with 9 significant digits; empty cells mean "not
applicable".  Every column except ``wall_time`` is a pure function of the
configuration.
"""

from __future__ import annotations

import csv
import functools
import hashlib
import io
import json
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .. import __version__, accountant, rng
from .. import inference as inf
from .. import sampler as smp
from ..prob.models import gmm_model, hlr_model, logreg_model
from . import data as datagen
from .metrics import auc, gmm_test_loglik, hlr_scores, logreg_scores

CSV_COLUMNS = (
    "run_id", "model", "seed", "epsilon", "sigma", "iteration",
    "elbo", "auc", "test_loglik", "wall_time",
)
MODELS = ("logreg", "hlr", "gmm")

# tuned defaults per model; the regression models share the HLR setup
PRESETS = {
    "hlr": {"N": 500, "B": 20, "T": 100_000, "clip_bound": 2.0, "learning_rate": 1e-2},
    "logreg": {"N": 500, "B": 20, "T": 100_000, "clip_bound": 2.0, "learning_rate": 1e-2},
    "gmm": {"N": 1000, "B": 100, "T": 1000, "clip_bound": 1.0, "learning_rate": 5e-2},
}


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment; ``repeats`` runs use seeds ``seed, seed + 1, ...``.

    Privacy is set by ``epsilon`` (sigma found by search) or directly by
    ``sigma``; with neither the run is non-private.  ``delta`` defaults to
    ``1 / N``.  ``eval_every`` 0 evaluates only after the last iteration.
    The data set depends on ``data_seed`` only, so repeats share it.
    """

    model: str = "hlr"
    N: int = 500
    B: int = 20
    T: int = 100_000
    epsilon: float | None = None
    sigma: float | None = None
    delta: float | None = None
    clip_bound: float = 2.0
    learning_rate: float = 1e-2
    seed: int = 0
    data_seed: int = 0
    repeats: int = 1
    eval_every: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.epsilon is not None and self.sigma is not None:
            raise ValueError("give epsilon or sigma, not both")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 1 <= self.B <= self.N:
            raise ValueError("need 1 <= B <= N")
        if self.T < 1:
            raise ValueError("T must be positive")

    @property
    def private(self) -> bool:
        return self.epsilon is not None or self.sigma is not None

    @property
    def delta_value(self) -> float:
        return self.delta if self.delta is not None else 1.0 / self.N

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        """Config from a mapping; fields left out take the model's preset."""
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls.preset(d.get("model", "hlr"), **{k: v for k, v in d.items() if k != "model"})

    @classmethod
    def preset(cls, model: str, **overrides) -> "ExperimentConfig":
        if model not in PRESETS:
            raise ValueError(f"model must be one of {MODELS}")
        return cls(model=model, **{**PRESETS[model], **overrides})

    def digest(self) -> str:
        doc = {k: v for k, v in self.to_dict().items() if k != "output"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    sigma: float
    rows: list = field(default_factory=list)
    final: list = field(default_factory=list)

    def metric(self) -> np.ndarray:
        """Final AUC (regression models) or test log-likelihood per run."""
        key = "test_loglik" if self.config.model == "gmm" else "auc"
        return np.array([r[key] for r in self.final])

    def csv_text(self, with_wall_time: bool = True) -> str:
        return rows_to_csv(self.rows, with_wall_time)


@functools.lru_cache(maxsize=64)
def sigma_for(epsilon: float, delta: float, q: float, T: int) -> float:
    return accountant.approximate_sigma(epsilon, delta, q, T)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def rows_to_csv(rows, with_wall_time: bool = True) -> str:
    cols = CSV_COLUMNS if with_wall_time else CSV_COLUMNS[:-1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in cols])
    return buf.getvalue()


def load_data(cfg: ExperimentConfig):
    if cfg.model == "gmm":
        return datagen.gen_gmm_data(cfg.N, cfg.data_seed)
    return datagen.gen_hlr_data(cfg.N, cfg.data_seed)


def _model_and_data(cfg: ExperimentConfig, ds):
    if cfg.model == "hlr":
        return hlr_model(ds.g, datagen.HLR_D), ds.train()
    if cfg.model == "logreg":
        # pooled, non-hierarchical regression on the same records
        return logreg_model(ds.x.shape[1]), {"x": ds.x, "y": ds.y}
    return gmm_model(datagen.GMM_K, datagen.GMM_DIM), ds.train()


def evaluate(cfg: ExperimentConfig, ds, psi) -> dict:
    if cfg.model == "hlr":
        return {"auc": auc(hlr_scores(psi, ds.g, ds.x_test, ds.l_test), ds.y_test)}
    if cfg.model == "logreg":
        return {"auc": auc(logreg_scores(psi, ds.x_test), ds.y_test)}
    return {"test_loglik": gmm_test_loglik(psi, ds.x_test)}


def _dpvi_config(cfg: ExperimentConfig, sigma: float) -> inf.DpviConfig:
    if cfg.private:
        return inf.DpviConfig(
            batch_size=cfg.B, data_size=cfg.N, clip_bound=cfg.clip_bound,
            noise_multiplier=sigma, learning_rate=cfg.learning_rate,
        )
    return inf.DpviConfig(
        batch_size=cfg.B, data_size=cfg.N, clip_bound=math.inf,
        noise_multiplier=0.0, learning_rate=cfg.learning_rate, private=False,
    )


def run_single(cfg: ExperimentConfig, run_id: int, ds=None, sigma: float | None = None):
    """One training run; returns ``(rows, final_row, state)``."""
    ds = ds if ds is not None else load_data(cfg)
    if sigma is None:
        sigma = resolve_sigma(cfg)
    seed = cfg.seed + run_id
    model, train = _model_and_data(cfg, ds)
    dcfg = _dpvi_config(cfg, sigma)
    root = rng.key(seed)
    state = inf.init(rng.split(root, 0), model, dcfg)
    sampler_state = smp.SamplerState(cfg.N, cfg.B, rng.split(root, 1))
    every = cfg.eval_every if cfg.eval_every > 0 else cfg.T
    rows = []
    t0 = time.perf_counter()
    done = 0
    while done < cfg.T:
        m = min(every, cfg.T - done)
        state, losses = inf.fit(state, train, dcfg, model, sampler_state, m)
        done += m
        row = {
            "run_id": run_id, "model": cfg.model, "seed": seed,
            "epsilon": cfg.epsilon, "sigma": sigma if cfg.private else None,
            "iteration": done, "elbo": -float(losses[-1]),
            "auc": None, "test_loglik": None,
        }
        row.update(evaluate(cfg, ds, state.psi))
        row["wall_time"] = time.perf_counter() - t0
        rows.append(row)
    return rows, rows[-1], state


def resolve_sigma(cfg: ExperimentConfig) -> float:
    if cfg.sigma is not None:
        return float(cfg.sigma)
    if cfg.epsilon is not None:
        return sigma_for(float(cfg.epsilon), cfg.delta_value, cfg.B / cfg.N, cfg.T)
    return 0.0


def run_experiment(cfg: ExperimentConfig, write: bool = True, ds=None) -> ExperimentResult:
    """All repeats of ``cfg``; writes CSV and manifest when ``cfg.output`` is set.

    ``ds`` replaces the generated data set (same attributes as the generator
    output, e.g. ``x, y, x_test, y_test`` for logistic regression).
    """
    ds = ds if ds is not None else load_data(cfg)
    sigma = resolve_sigma(cfg)
    result = ExperimentResult(cfg, sigma)
    for run_id in range(cfg.repeats):
        rows, final, _ = run_single(cfg, run_id, ds, sigma)
        result.rows.extend(rows)
        result.final.append(final)
    if write and cfg.output:
        write_outputs(result, getattr(ds, "version", "external"))
    return result


def manifest(result: ExperimentResult, generator_version: str) -> dict:
    cfg = result.config
    spent = None
    if cfg.private:
        spent = accountant.epsilon(result.sigma, cfg.B / cfg.N, cfg.T, cfg.delta_value)
    return {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "code_version": __version__,
        "generator_version": generator_version,
        "sigma": result.sigma if cfg.private else None,
        "delta": cfg.delta_value,
        "epsilon_spent": spent,
        "csv_columns": list(CSV_COLUMNS),
    }


def write_outputs(result: ExperimentResult, generator_version: str) -> tuple:
    out = Path(result.config.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.csv_text())
    man = out.with_suffix(".manifest.json")
    man.write_text(json.dumps(manifest(result, generator_version), indent=2, sort_keys=True))
    return out, man


def with_changes(cfg: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(cfg, **changes)
