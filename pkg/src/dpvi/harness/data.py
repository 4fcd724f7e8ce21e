"""Synthetic data sets for the hierarchical regression and mixture experiments.

Both generators draw from :mod:`dpvi.rng`, so a data set is a pure function of
``(N, seed)`` and the generator version string.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import rng
from ..autodiff import sigmoid

HLR_VERSION = "hlr-v1"
GMM_VERSION = "gmm-v1"

HLR_D, HLR_L, HLR_K = 5, 3, 3
GMM_K, GMM_DIM = 5, 2
GMM_MEAN_SCALE = 3.0
GMM_STD = 0.5


@dataclass(frozen=True)
class HlrData:
    """Train and test records plus the generating parameters.

    ``g`` is the public (L, K) group matrix, ``M`` the true (D, K) map and
    ``w`` the true (L, D) group weights.
    """

    x: np.ndarray
    y: np.ndarray
    l: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    l_test: np.ndarray
    g: np.ndarray
    M: np.ndarray
    w: np.ndarray
    version: str = HLR_VERSION

    def train(self) -> dict:
        return {"x": self.x, "y": self.y, "l": self.l}

    def test(self) -> dict:
        return {"x": self.x_test, "y": self.y_test, "l": self.l_test}


def _hlr_records(key, n, w):
    x = rng.normal(rng.split(key, 0), (n, HLR_D))
    l = np.arange(n) % HLR_L
    p = sigmoid(np.sum(w[l] * x, axis=-1))
    y = (rng.uniform(rng.split(key, 1), (n,)) < p).astype(np.int64)
    return x, y, l


def gen_hlr_data(n: int, seed: int) -> HlrData:
    """Hierarchical logistic regression data with a test set of the same size.

    ``g ~ N(0, 1)``, ``M ~ N(0, 1)``, ``w_l = M g_l + N(0, I)``,
    ``x ~ N(0, I)``, groups assigned round-robin, ``y ~ Bernoulli(sigmoid(w_l . x))``.
    """
    if n < HLR_L:
        raise ValueError(f"need at least {HLR_L} records")
    root = rng.key(seed)
    g = rng.normal(rng.split(root, 0), (HLR_L, HLR_K))
    m = rng.normal(rng.split(root, 1), (HLR_D, HLR_K))
    w = g @ m.T + rng.normal(rng.split(root, 2), (HLR_L, HLR_D))
    x, y, l = _hlr_records(rng.split(root, 3), n, w)
    xt, yt, lt = _hlr_records(rng.split(root, 4), n, w)
    return HlrData(x, y, l, xt, yt, lt, g, m, w)


@dataclass(frozen=True)
class GmmData:
    x: np.ndarray
    z: np.ndarray
    x_test: np.ndarray
    z_test: np.ndarray
    locs: np.ndarray
    pis: np.ndarray
    scale: float
    version: str = GMM_VERSION

    def train(self) -> dict:
        return {"x": self.x}

    def test(self) -> dict:
        return {"x": self.x_test}


def _gmm_points(key, n, locs):
    k = locs.shape[0]
    u = rng.uniform(rng.split(key, 0), (n,))
    z = np.minimum((u * k).astype(np.int64), k - 1)
    x = locs[z] + GMM_STD * rng.normal(rng.split(key, 1), (n, locs.shape[1]))
    return x, z


def gen_gmm_data(n: int, seed: int) -> GmmData:
    """2-D points from 5 equally weighted spherical clusters (std 0.5).

    Cluster means are ``N(0, 3^2 I)``; the test split has ``n`` points too.
    """
    if n < GMM_K:
        raise ValueError(f"need at least {GMM_K} points")
    root = rng.key(seed)
    locs = GMM_MEAN_SCALE * rng.normal(rng.split(root, 0), (GMM_K, GMM_DIM))
    x, z = _gmm_points(rng.split(root, 1), n, locs)
    xt, zt = _gmm_points(rng.split(root, 2), n, locs)
    return GmmData(x, z, xt, zt, locs, np.full(GMM_K, 1.0 / GMM_K), GMM_STD)


def write_records_csv(path, x, y=None, l=None) -> None:
    """One record per row: feature columns, then the label, then the group."""
    cols = [np.asarray(x, dtype=np.float64)]
    header = [f"x{j}" for j in range(cols[0].shape[1])]
    if y is not None:
        cols.append(np.asarray(y, dtype=np.float64)[:, None])
        header.append("y")
    if l is not None:
        cols.append(np.asarray(l, dtype=np.float64)[:, None])
        header.append("l")
    np.savetxt(path, np.hstack(cols), delimiter=",", header=",".join(header), comments="", fmt="%.17g")


def read_records_csv(path, label: bool = True, group: bool = False) -> dict:
    """Inverse of :func:`write_records_csv`; returns ``{"x", ["y"], ["l"]}``."""
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_extra = int(label) + int(group)
    out = {"x": arr[:, : arr.shape[1] - n_extra]}
    if label:
        out["y"] = arr[:, arr.shape[1] - n_extra].astype(np.int64)
    if group:
        out["l"] = arr[:, -1].astype(np.int64)
    return out


def write_matrix_csv(path, m) -> None:
    np.savetxt(path, np.asarray(m, dtype=np.float64), delimiter=",", fmt="%.17g")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
