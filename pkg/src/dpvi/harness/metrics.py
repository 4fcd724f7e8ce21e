"""Evaluation metrics."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from ..prob import gmm_log_prob
from ..prob.guide import GuideParams
from ..prob.models import gmm_point_estimate


def auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def hlr_scores(psi: GuideParams, g, x, l) -> np.ndarray:
    """Linear scores under the predictive mean weights ``E[w_l] = M_loc g_l``."""
    w = np.asarray(g)[np.asarray(l)] @ np.asarray(psi["M_loc"]).T
    return np.sum(w * np.asarray(x), axis=-1)


def logreg_scores(psi: GuideParams, x) -> np.ndarray:
    return np.asarray(x) @ np.asarray(psi["w_loc"])


def gmm_test_loglik(psi: GuideParams, x_test) -> float:
    """Mean held-out log density at the guide means."""
    p = gmm_point_estimate(psi)
    x = np.asarray(x_test, dtype=np.float64)
    return float(np.mean(gmm_log_prob(p["pis"], p["locs"], p["sigmas"], x)))
