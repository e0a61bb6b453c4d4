"""Run filters or ensembles over an observation sequence and score them."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import alignment, metrics_io
from .ensemble import Ensemble

__all__ = ["SequenceResult", "run_sequence", "latent_scores"]


@dataclass
class SequenceResult:
    """Per-step predictive summaries of ``y_t`` given ``Y_{t-1}``.

    ``log_density[t, d]`` is the marginal predictive log-density of the
    observed ``y_t[d]``; ``lower``/``upper`` hold the central interval when
    requested.
    """

    mean: np.ndarray
    log_density: np.ndarray
    lower: np.ndarray | None
    upper: np.ndarray | None
    estimates: np.ndarray
    runtime: float
    weights: list = field(default_factory=list)

    def one_step_rmse(self, Y, start=0):
        return metrics_io.rmse(self.mean[start:], np.asarray(Y)[start:])

    def mnll(self, start=0):
        return float(-np.mean(self.log_density[start:]))


def run_sequence(model, Y, interval_from=None, level=0.95, progress=None):
    """Feed ``Y`` (T, d_y) to ``model`` (a member or an :class:`Ensemble`) step by step.

    Intervals are computed from step ``interval_from`` on (``None`` skips them).
    """
    Y = np.asarray(Y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    T, k = Y.shape
    mean = np.empty((T, k))
    logd = np.empty((T, k))
    lower = upper = None
    if interval_from is not None:
        lower = np.full((T, k), np.nan)
        upper = np.full((T, k), np.nan)
    est = []
    weights = []
    start = time.perf_counter()
    for t in range(T):
        res = model.step(Y[t])
        pred = res.predictive
        mean[t] = pred.mean()
        for d in range(k):
            logd[t, d] = pred.marginal_log_density(Y[t, d], d)
        if interval_from is not None and t >= interval_from:
            lower[t], upper[t] = pred.interval(level)
        if isinstance(model, Ensemble):
            weights.append(res.weights)
        else:
            est.append(np.concatenate([np.ravel(x) for x in getattr(res, "x_hats", [res.x_hat])]))
        if progress is not None:
            progress(t, res)
    runtime = time.perf_counter() - start
    return SequenceResult(mean, logd, lower, upper, np.array(est), runtime, weights)


def latent_scores(estimate, truth):
    """Standardize ``estimate``, map it onto the z-scored ``truth`` and score it.

    Returns ``(aligned, rmse, correlations)``; the RMSE is per dimension and
    averaged, correlations are per dimension.
    """
    truth = np.asarray(truth, dtype=float)
    z = (truth - truth.mean(0)) / truth.std(0)
    std = alignment.svd_standardize(estimate)
    aligned, err = alignment.procrustes_to_truth(std, z)
    return aligned, err, metrics_io.pearson(aligned, z)
