"""Particle-system mechanics shared by the single and deep filters."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError

__all__ = [
    "ParticleSystem",
    "normalize_log_weights",
    "ess",
    "systematic_resample",
    "in_place_ancestors",
    "mmse",
    "RESAMPLE_MODES",
]

RESAMPLE_MODES = ("always", "ess")


@dataclass
class ParticleSystem:
    """``M`` streams with one latent array per layer and their log-weights.

    ``states[l]`` has shape (M, d_l).  Per-stream posteriors live with the
    filter that owns this system and are reordered alongside it.
    """

    states: list
    log_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        self.states = [np.ascontiguousarray(s, dtype=float) for s in self.states]
        if self.log_weights is None:
            self.log_weights = np.full(self.M, -np.log(self.M))

    @property
    def M(self):
        return self.states[0].shape[0]

    @property
    def weights(self):
        return normalize_log_weights(self.log_weights)[0]

    def resample(self, ancestors):
        """Apply ancestor indices to every layer and reset to uniform weights."""
        for l, s in enumerate(self.states):
            self.states[l] = s[ancestors]
        self.log_weights = np.full(self.M, -np.log(self.M))

    def copy(self):
        return ParticleSystem([s.copy() for s in self.states], self.log_weights.copy())


def normalize_log_weights(logw):
    """Softmax of ``logw`` by max-shift.

    Returns ``(weights, log_evidence_increment)`` where the increment is
    ``logsumexp(logw) - log M``, the particle estimate of the predictive
    log-likelihood when ``logw`` are per-stream predictive log-densities.
    """
    logw = np.asarray(logw, dtype=float)
    if logw.ndim != 1 or logw.size == 0:
        raise ValueError(f"expected a non-empty vector of log-weights, got shape {logw.shape}")
    if np.any(np.isnan(logw)) or not np.any(np.isfinite(logw)):
        raise DegenerateWeightsError("no finite log-weight to normalize")
    top = np.max(logw[np.isfinite(logw)])
    w = np.exp(logw - top)
    total = w.sum()
    w /= total
    return w, float(top + np.log(total) - np.log(logw.size))


def ess(weights):
    """Effective sample size ``1 / sum(w**2)`` of normalized weights."""
    w = np.asarray(weights, dtype=float)
    return float(1.0 / np.dot(w, w))


def systematic_resample(weights, M, rng):
    """``M`` ancestor indices by systematic resampling (one uniform offset, stride 1/M).

    Indices come out sorted; index ``i`` appears ``floor(M w_i)`` or
    ``ceil(M w_i)`` times.
    """
    w = np.asarray(weights, dtype=float)
    cdf = np.cumsum(w)
    cdf[-1] = 1.0
    u = (np.arange(M) + rng.random()) / M
    return np.minimum(np.searchsorted(cdf, u, side="right"), w.size - 1)


def in_place_ancestors(indices):
    """Rearrange resampled indices so that every survivor keeps its own slot.

    The returned array is a permutation of ``indices`` with ``out[a] == a``
    for every ancestor ``a`` that appears.  Streams can then be copied in
    place, and only the slots of dropped streams are overwritten.
    """
    indices = np.asarray(indices)
    M = indices.size
    counts = np.bincount(indices, minlength=M)
    out = np.full(M, -1, dtype=np.int64)
    survivors = counts > 0
    out[survivors] = np.flatnonzero(survivors)
    extra = np.repeat(np.arange(M), np.maximum(counts - 1, 0))
    out[out < 0] = extra
    return out


def mmse(states, weights):
    """Weighted mean ``sum_m w_m x_m`` over the leading (stream) axis."""
    return np.tensordot(np.asarray(weights, dtype=float), np.asarray(states, dtype=float), axes=1)


def log_mean_exp(logw, axis=None):
    logw = np.asarray(logw, dtype=float)
    n = logw.size if axis is None else logw.shape[axis]
    return logsumexp(logw, axis=axis) - np.log(n)
