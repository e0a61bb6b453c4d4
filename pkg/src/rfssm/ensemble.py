"""Ensembles of GP-SSM filters over a kernel dictionary.

Each member runs its own filter with frequencies drawn from one kernel of
the dictionary.  Member weights are Bayesian posterior weights driven by the
members' one-step predictive likelihoods; they are held uniform during a
burn-in period, and afterwards members that lose too much weight are
replaced by clones of better ones ("keep and drop").
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import alignment, pf_core
from .conjugate_blr import TMixture
from .errors import ConfigError, DegenerateWeightsError
from .gpdssm import DeepConfig, DeepMember
from .gpssm import FilterConfig, GpssmMember
from .spectral_features import PAPER_GRID, build_dictionary, derive_seed, sample_frequencies

__all__ = [
    "Ensemble",
    "EnsembleStepResult",
    "update_member_weights",
    "ensemble_predictive",
    "keep_and_drop",
    "ensemble_step",
    "resolve_threads",
]


def resolve_threads(threads=None):
    """Worker count: ``RFSSM_THREADS`` wins over ``threads``, which defaults to the core count."""
    env = os.environ.get("RFSSM_THREADS")
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"RFSSM_THREADS must be an integer, got {env!r}") from None
    if threads is None:
        threads = len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count()
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return int(threads)


@dataclass
class EnsembleStepResult:
    """Per-step ensemble output.

    ``predictive`` is the mixture predictive of ``y_t`` under the member
    weights in force before the step.
    """

    predictive: TMixture
    member_estimates: list
    weights: np.ndarray
    log_evidence_increments: np.ndarray
    resampled: bool


def _member_kind(config):
    if isinstance(config, FilterConfig):
        return GpssmMember
    if isinstance(config, DeepConfig):
        return DeepMember
    raise ConfigError(f"unsupported member config {type(config).__name__}")


class Ensemble:
    """``S`` filters with posterior member weights.

    Parameters
    ----------
    members : list
        :class:`GpssmMember` or :class:`DeepMember` instances.
    T0 : int
        Burn-in horizon; weights are exactly ``1/S`` while ``t <= T0``.
    seed : int
        Master seed, used for keep-and-drop decisions and clone streams.
    """

    def __init__(self, members, T0, seed, threads=1, log_weights=None, t=0):
        if not members:
            raise ConfigError("an ensemble needs at least one member")
        self.members = list(members)
        self.T0 = int(T0)
        self.seed = int(seed)
        self.threads = int(threads)
        self.t = int(t)
        S = len(self.members)
        self.log_weights = np.full(S, -np.log(S)) if log_weights is None else np.asarray(log_weights, float)
        self.rng = np.random.default_rng(derive_seed(seed, 3))
        self.n_clones = 0
        self.n_resamples = 0
        self._pool = None

    @classmethod
    def from_dictionary(cls, config, S, seed, T0, grid=PAPER_GRID, threads=1):
        """Members whose kernels are drawn from the lengthscale ``grid``.

        Member ``s`` uses dictionary entry ``s`` for its first transition map.
        For a single-layer member the observation map reuses that kernel;
        every other map draws its own lengthscales from the grid.
        """
        S = int(S)
        kind = _member_kind(config)
        if kind is GpssmMember:
            dx = build_dictionary(grid, S, config.J_x, config.d_x, derive_seed(seed, 0, 0),
                                  config.kernel_x.variance)
            members = []
            for s in range(S):
                mseed = derive_seed(seed, 1, s)
                oy = sample_frequencies(dx[s].source, config.J_y, config.d_x, derive_seed(mseed, 1))
                members.append(GpssmMember.init(config, mseed, omega_x=dx[s], omega_y=oy))
        else:
            layer_dicts = [
                build_dictionary(grid, S, config.J[l], config.input_dim(l), derive_seed(seed, 0, l),
                                 config.kernels[l].variance)
                for l in range(config.L)
            ]
            dy = build_dictionary(grid, S, config.J_y, config.layer_dims[-1], derive_seed(seed, 2),
                                  config.kernel_y.variance)
            members = [
                DeepMember.init(config, derive_seed(seed, 1, s),
                                omegas=[d[s] for d in layer_dicts], omega_y=dy[s])
                for s in range(S)
            ]
        return cls(members, T0, seed, threads)

    # -- properties --------------------------------------------------------

    @property
    def S(self):
        return len(self.members)

    @property
    def weights(self):
        return np.exp(self.log_weights)

    # -- operations --------------------------------------------------------

    def update_member_weights(self, log_pred):
        """Bayes update ``w_s <- w_s p(y_t | s, Y_{t-1})`` followed by normalization."""
        log_pred = np.asarray(log_pred, dtype=float)
        if log_pred.shape != (self.S,):
            raise ValueError(f"expected {self.S} member log-predictives, got shape {log_pred.shape}")
        log_pred = np.where(np.isnan(log_pred), -np.inf, log_pred)
        combined = self.log_weights + log_pred
        if not np.any(np.isfinite(combined)):
            raise DegenerateWeightsError("every ensemble member assigns zero predictive density")
        self.log_weights = combined - logsumexp(combined)

    def ensemble_predictive(self, member_predictives, log_weights=None):
        """Mixture of the member predictive mixtures under the member weights."""
        w = np.exp(self.log_weights if log_weights is None else log_weights)
        keep = [i for i in range(self.S) if w[i] > 0]
        return TMixture.combine([member_predictives[i] for i in keep], w[keep])

    def keep_and_drop(self):
        """Replace low-weight members when the member ESS falls below ``S/2``.

        Member indices are drawn by systematic resampling; duplicated members
        become clones with fresh random streams.  Returns True if the ensemble
        was resampled.
        """
        w = self.weights
        if pf_core.ess(w) >= self.S / 2:
            return False
        idx = pf_core.systematic_resample(w, self.S, self.rng)
        anc = pf_core.in_place_ancestors(idx)
        new = list(self.members)
        for s in range(self.S):
            if anc[s] != s:
                self.n_clones += 1
                new[s] = self.members[anc[s]].clone(seed=derive_seed(self.seed, 4, self.n_clones))
        self.members = new
        self.log_weights = np.full(self.S, -np.log(self.S))
        self.n_resamples += 1
        return True

    def _map(self, fn, items):
        if self.threads <= 1 or len(items) <= 1:
            return [fn(i) for i in items]
        if self._pool is None:
            self._pool = ThreadPoolExecutor(max_workers=self.threads)
        return list(self._pool.map(fn, items))

    def step(self, y):
        y = np.asarray(y, dtype=float)
        results = self._map(lambda m: m.step(y), self.members)
        prev_logw = self.log_weights.copy()
        self.t += 1
        increments = np.array([r.log_evidence_increment for r in results])
        resampled = False
        if self.t > self.T0:
            self.update_member_weights(increments)
            resampled = self.keep_and_drop()
        else:
            self.log_weights = np.full(self.S, -np.log(self.S))
        predictive = self.ensemble_predictive([r.predictive for r in results], prev_logw)
        return EnsembleStepResult(predictive, [r.x_hat for r in results], self.weights.copy(),
                                  increments, resampled)

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # -- latent trajectories -----------------------------------------------

    def member_trajectories(self, start=0, layer=0):
        out = []
        for m in self.members:
            X = m.estimates(layer) if isinstance(m, DeepMember) else m.estimates()
            out.append(X[start:])
        return out

    def fused_trajectory(self, start=0, t_star=None, layer=0):
        """Standardize, align and fuse the member estimates from index ``start`` on.

        The highest-weight member supplies the guidance point at ``t_star``
        (default: the first row, i.e. the first index after ``start``) and
        the reference frame for choosing between mirror images.
        """
        trajs = [alignment.svd_standardize(X) for X in self.member_trajectories(start, layer)]
        lead = int(np.argmax(self.log_weights))
        t_star = 0 if t_star is None else int(t_star)
        aligned = alignment.align_to_guidance(trajs, trajs[lead][t_star], t_star, reference=trajs[lead])
        return alignment.fuse(aligned, self.weights)

    # -- persistence -------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for s, m in enumerate(self.members):
            m.save(directory / f"member_{s:04d}.npz")
        meta = {"T0": self.T0, "seed": self.seed, "t": self.t, "log_weights": self.log_weights.tolist(),
                "n_clones": self.n_clones, "n_resamples": self.n_resamples,
                "rng": self.rng.bit_generator.state,
                "kinds": [type(m).__name__ for m in self.members]}
        (directory / "ensemble.json").write_text(json.dumps(meta))

    @classmethod
    def load(cls, directory, threads=1):
        directory = Path(directory)
        meta = json.loads((directory / "ensemble.json").read_text())
        kinds = {"GpssmMember": GpssmMember, "DeepMember": DeepMember}
        members = [kinds[k].load(directory / f"member_{s:04d}.npz") for s, k in enumerate(meta["kinds"])]
        ens = cls(members, meta["T0"], meta["seed"], threads, meta["log_weights"], meta["t"])
        ens.n_clones = meta["n_clones"]
        ens.n_resamples = meta["n_resamples"]
        ens.rng.bit_generator.state = meta["rng"]
        return ens


def update_member_weights(state, log_pred):
    state.update_member_weights(log_pred)


def ensemble_predictive(state, member_predictives):
    return state.ensemble_predictive(member_predictives)


def keep_and_drop(state):
    return state.keep_and_drop()


def ensemble_step(state, y):
    return state.step(y)
