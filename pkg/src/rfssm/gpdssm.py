"""Deep GP state-space filter with layered latent processes.

Layer 1 (the root) evolves from its own previous value; every layer
``l >= 2`` is a random-feature GP of layer ``l - 1`` at the same time step,
and the observations are a GP of the top layer ``L``:

    x_{1,t} = H_1.T phi_1(x_{1,t-1}) + u_{1,t}
    x_{l,t} = H_l.T phi_l(x_{l-1,t}) + u_{l,t}
    y_t     = Theta.T phi_y(x_{L,t}) + v_t

A stream carries one particle per layer plus the posteriors of every layer,
and streams are resampled as a whole.  With ``L = 1`` the filter consumes
random numbers in the same order as :class:`rfssm.gpssm.GpssmMember` and
reproduces it exactly.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from . import _kernels, pf_core
from .conjugate_blr import NIGBank, TMixture, _logpdf_spread
from .errors import ConfigError
from .gpssm import (
    LIKELIHOODS,
    _kernel,
    omega_arrays,
    omega_from_arrays,
    predictive_spread,
    rng_from_state,
    sample_predictive,
)
from .spectral_features import KernelSpec, derive_seed, feature_matrix, sample_frequencies

__all__ = ["DeepConfig", "DeepStepResult", "DeepMember", "STREAM_WEIGHT_MODES",
           "propagate_layers", "estimate_top_down", "stream_weights", "deep_step"]

STREAM_WEIGHT_MODES = ("average", "point")


def _per_layer(value, L, name):
    if isinstance(value, (list, tuple)) and not isinstance(value, KernelSpec):
        if len(value) != L:
            raise ConfigError(f"{name} has {len(value)} entries for {L} layers")
        return tuple(value)
    return (value,) * L


@dataclass(frozen=True)
class DeepConfig:
    """Configuration of a deep filter.

    ``J``, ``kernels`` and ``a0`` accept one value for all layers or a
    sequence with one entry per layer.
    """

    layer_dims: tuple
    d_y: int
    M: int = 500
    J: object = 50
    J_y: int = 50
    kernels: object = field(default_factory=lambda: KernelSpec((1.0,)))
    kernel_y: KernelSpec = field(default_factory=lambda: KernelSpec((1.0,)))
    a0: object = None
    a0_y: float | None = None
    b0: float = 1.0
    resample: str = "always"
    stream_weight_mode: str = "average"
    likelihood: str = "student_t"
    gaussian_variance: float = 0.1
    max_bank_bytes: float = 2e9

    def __post_init__(self):
        dims = tuple(int(d) for d in np.atleast_1d(self.layer_dims))
        object.__setattr__(self, "layer_dims", dims)
        if not dims:
            raise ConfigError("at least one layer is required")
        L = len(dims)
        raw = self.kernels
        if isinstance(raw, (list, tuple)) and raw and isinstance(raw[0], (KernelSpec, dict, list, tuple)):
            kernels = _per_layer(list(raw), L, "kernels")
        else:
            kernels = (raw,) * L
        object.__setattr__(self, "kernels", tuple(_kernel(k) for k in kernels))
        object.__setattr__(self, "kernel_y", _kernel(self.kernel_y))
        object.__setattr__(self, "J", tuple(int(j) for j in _per_layer(self.J, L, "J")))
        object.__setattr__(self, "a0", _per_layer(self.a0, L, "a0"))
        self.validate()

    @property
    def L(self):
        return len(self.layer_dims)

    def input_dim(self, layer):
        """Dimension of the regressor input of ``layer`` (0-based)."""
        return self.layer_dims[0] if layer == 0 else self.layer_dims[layer - 1]

    def validate(self):
        if any(d < 1 for d in self.layer_dims):
            raise ConfigError(f"layer dims must be >= 1, got {self.layer_dims}")
        if int(self.M) < 1 or int(self.J_y) < 1 or any(j < 1 for j in self.J):
            raise ConfigError("M, J and J_y must be >= 1")
        if int(self.d_y) < 0:
            raise ConfigError(f"d_y must be >= 0, got {self.d_y}")
        for l, (a0, J) in enumerate(zip(self.a0, self.J)):
            if a0 is not None and not a0 > 2 * J:
                raise ConfigError(f"a0 of layer {l + 1} ({a0}) must exceed 2J={2 * J}")
        if self.a0_y is not None and not self.a0_y > 2 * self.J_y:
            raise ConfigError(f"a0_y={self.a0_y} must exceed 2J={2 * self.J_y}")
        if not self.b0 > 0:
            raise ConfigError(f"b0 must be positive, got {self.b0}")
        if self.resample not in pf_core.RESAMPLE_MODES:
            raise ConfigError(f"resample must be one of {pf_core.RESAMPLE_MODES}")
        if self.stream_weight_mode not in STREAM_WEIGHT_MODES:
            raise ConfigError(f"stream_weight_mode must be one of {STREAM_WEIGHT_MODES}")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"likelihood must be one of {LIKELIHOODS}")
        if not self.gaussian_variance > 0:
            raise ConfigError("gaussian_variance must be positive")
        n = [2 * j for j in self.J] + [2 * self.J_y]
        nbytes = 8 * self.M * sum(v * (v + 1) // 2 for v in n)
        if nbytes > self.max_bank_bytes:
            raise ConfigError(
                f"posterior factors need {nbytes / 1e9:.2f} GB, above max_bank_bytes="
                f"{self.max_bank_bytes / 1e9:.2f} GB; reduce M or J"
            )

    @classmethod
    def from_filter_config(cls, fc):
        """Single-layer deep config equivalent to a :class:`FilterConfig`."""
        if fc.shared_params:
            raise ConfigError("the deep filter has no shared-parameter mode")
        return cls((fc.d_x,), fc.d_y, fc.M, fc.J_x, fc.J_y, fc.kernel_x, fc.kernel_y,
                   fc.a0_x, fc.a0_y, fc.b0, fc.resample, "average", fc.likelihood,
                   fc.gaussian_variance, fc.max_bank_bytes)

    def to_dict(self):
        d = asdict(self)
        d["kernels"] = [asdict(k) for k in self.kernels]
        d["kernel_y"] = asdict(self.kernel_y)
        d["layer_dims"] = list(self.layer_dims)
        d["J"] = list(self.J)
        d["a0"] = list(self.a0)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DeepStepResult:
    """Output of one deep step; ``x_hat`` is the root-layer estimate."""

    x_hats: list
    log_evidence_increment: float
    predictive: TMixture
    weights: np.ndarray
    layer_weights: list
    ess: float

    @property
    def x_hat(self):
        return self.x_hats[0]


def _log_norm_const(dof):
    if np.isinf(dof):
        return -0.5 * np.log(2.0 * np.pi)
    return gammaln(0.5 * (dof + 1.0)) - gammaln(0.5 * dof) - 0.5 * np.log(np.pi * dof)


def cross_log_mean(x, loc, spread, dof, logw):
    """``log sum_m' w[m'] p(x[m'] | stream m)`` for every stream ``m``.

    ``p(. | stream m)`` is the product over dimensions of t densities with
    stream ``m``'s location and spread; ``logw`` are normalized log-weights.
    """
    x = np.ascontiguousarray(x, dtype=float)
    out = np.empty(x.shape[0])
    nu = -1.0 if np.isinf(dof) else float(dof)
    _kernels.cross_log_mean(x, np.ascontiguousarray(loc, dtype=float),
                            np.ascontiguousarray(spread, dtype=float), nu,
                            float(_log_norm_const(dof)), np.ascontiguousarray(logw, dtype=float), out)
    return out


class DeepMember:
    """Particle filter over ``L`` stacked latent layers."""

    def __init__(self, config, omegas, omega_y, particles, banks, bank_y, rng, t=0):
        self.config = config
        self.omegas = list(omegas)
        self.omega_y = omega_y
        self.particles = particles
        self.banks = list(banks)
        self.bank_y = bank_y
        self.rng = rng
        self.t = t
        self.history = [[] for _ in range(config.L)]
        self.transition_predictive = [None] * config.L
        self._obs_pred = None

    @classmethod
    def init(cls, config, seed, omegas=None, omega_y=None):
        """Root particles ~ N(0, I); upper layers start at zero and are overwritten at t=1."""
        c = config
        if omegas is None:
            omegas = [None] * c.L
        omegas = [
            om if om is not None
            else sample_frequencies(c.kernels[l], c.J[l], c.input_dim(l), derive_seed(seed, 0, l))
            for l, om in enumerate(omegas)
        ]
        if omega_y is None:
            omega_y = sample_frequencies(c.kernel_y, c.J_y, c.layer_dims[-1], derive_seed(seed, 1))
        for l, om in enumerate(omegas):
            if om.J != c.J[l] or om.d != c.input_dim(l):
                raise ConfigError(f"frequency set of layer {l + 1} does not match the config")
        if omega_y.J != c.J_y or omega_y.d != c.layer_dims[-1]:
            raise ConfigError("observation frequency set does not match the config")
        rng = np.random.default_rng(derive_seed(seed, 2))
        states = [rng.standard_normal((c.M, c.layer_dims[0]))]
        states += [np.zeros((c.M, d)) for d in c.layer_dims[1:]]
        banks = [
            NIGBank.prior(c.M, c.layer_dims[l], 2 * c.J[l], c.a0[l], c.b0, c.kernels[l].variance)
            for l in range(c.L)
        ]
        bank_y = NIGBank.prior(c.M, c.d_y, 2 * c.J_y, c.a0_y, c.b0, c.kernel_y.variance)
        return cls(c, omegas, omega_y, pf_core.ParticleSystem(states), banks, bank_y, rng)

    @property
    def M(self):
        return self.config.M

    @property
    def L(self):
        return self.config.L

    @property
    def x(self):
        return self.particles.states

    # -- deep step pieces --------------------------------------------------

    def propagate_layers(self, rng=None, noise=None):
        """Propagate layers 1..L in order; ``noise`` optionally gives one standardized array per layer."""
        rng = self.rng if rng is None else rng
        c = self.config
        states = self.particles.states
        for l in range(c.L):
            source = states[0] if l == 0 else states[l - 1]
            phi = feature_matrix(source, self.omegas[l])
            loc, q, b = self.banks[l].begin_update(phi)
            dof = self.banks[l].dof
            spread = predictive_spread(b, q, dof, c.likelihood, c.gaussian_variance)
            dof = dof if c.likelihood == "student_t" else np.inf
            self.transition_predictive[l] = (loc, spread, dof)
            states[l] = sample_predictive(loc, spread, dof, rng, None if noise is None else noise[l])
        self.t += 1
        return states

    def update_transition_posteriors(self):
        for l in range(self.L):
            self.banks[l].finish_update(self.particles.states[l])

    def update_observation_posteriors(self, y):
        c = self.config
        phi = feature_matrix(self.particles.states[-1], self.omega_y)
        loc, q, b = self.bank_y.update(phi, np.broadcast_to(y, (self.M, c.d_y)))
        dof = self.bank_y.dof - 1
        spread = predictive_spread(b, q, dof, c.likelihood, c.gaussian_variance)
        self._obs_pred = (loc, spread, dof if c.likelihood == "student_t" else np.inf)
        return self._obs_pred

    def observation_loglik(self, y):
        loc, spread, dof = self._obs_pred
        return _logpdf_spread(np.asarray(y, dtype=float)[None, :], loc, spread, dof).sum(axis=1)

    def layer_loglik(self, layer, value):
        """Log-density of ``value`` (one vector or (M, d)) under every stream's pre-update transition predictive of ``layer``."""
        loc, spread, dof = self.transition_predictive[layer]
        return _logpdf_spread(np.atleast_2d(value), loc, spread, dof).sum(axis=1)

    def estimate_top_down(self, obs_loglik, prev_logw=None):
        """Layer weights and MMSE estimates from the top layer down to the root.

        Returns ``(x_hats, layer_logw, layer_loglik)``: per-layer estimates,
        normalized log-weights and the unnormalized likelihood terms
        ``p(x_hat_{l+1} | x_l^{(m)})`` (the observation term for layer L).
        """
        if prev_logw is None:
            prev_logw = self.particles.log_weights
        L = self.L
        x_hats = [None] * L
        layer_logw = [None] * L
        layer_ll = [None] * L
        layer_ll[L - 1] = obs_loglik
        for l in range(L - 1, -1, -1):
            if l < L - 1:
                layer_ll[l] = self.layer_loglik(l + 1, x_hats[l + 1])
            w, _ = pf_core.normalize_log_weights(prev_logw + layer_ll[l])
            with np.errstate(divide="ignore"):
                layer_logw[l] = np.log(w)
            x_hats[l] = pf_core.mmse(self.particles.states[l], w)
        return x_hats, layer_logw, layer_ll

    def stream_weights(self, obs_loglik, layer_logw, layer_ll):
        """Per-stream log-likelihood used for resampling.

        ``average``: the observation term plus, for each lower layer, the
        log of the weighted average of ``p(x_{l+1}^{(m')} | x_l^{(m)})``.
        ``point``: the observation term plus ``log p(x_hat_{l+1} | x_l^{(m)})``.
        """
        total = np.array(obs_loglik, dtype=float, copy=True)
        for l in range(self.L - 1):
            if self.config.stream_weight_mode == "point":
                total += layer_ll[l]
            else:
                loc, spread, dof = self.transition_predictive[l + 1]
                total += cross_log_mean(self.particles.states[l + 1], loc, spread, dof, layer_logw[l + 1])
        return total

    def step(self, y, rng=None):
        rng = self.rng if rng is None else rng
        y = np.asarray(y, dtype=float).reshape(self.config.d_y)
        prev_logw = self.particles.log_weights
        prev_w = np.exp(prev_logw)
        self.propagate_layers(rng)
        self.update_transition_posteriors()
        self.update_observation_posteriors(y)
        obs_ll = self.observation_loglik(y)
        x_hats, layer_logw, layer_ll = self.estimate_top_down(obs_ll, prev_logw)
        combined = prev_logw + self.stream_weights(obs_ll, layer_logw, layer_ll)
        weights, _ = pf_core.normalize_log_weights(combined)
        increment = float(logsumexp(prev_logw + obs_ll))
        loc, spread, dof = self._obs_pred
        predictive = TMixture(prev_w, loc, spread, dof)
        self._finish(weights, rng)
        for l in range(self.L):
            self.history[l].append(x_hats[l])
        layer_weights = [np.exp(lw) for lw in layer_logw]
        return DeepStepResult(x_hats, increment, predictive, weights, layer_weights, pf_core.ess(weights))

    def _finish(self, weights, rng):
        c = self.config
        if c.resample == "ess" and pf_core.ess(weights) >= c.M / 2:
            self.particles.log_weights = np.log(weights)
            return
        idx = pf_core.systematic_resample(weights, c.M, rng)
        ancestors = pf_core.in_place_ancestors(idx)
        self.particles.resample(ancestors)
        for bank in self.banks:
            bank.resample(ancestors)
        self.bank_y.resample(ancestors)
        self.ancestors = ancestors

    def estimates(self, layer=0):
        return np.array(self.history[layer]).reshape(-1, self.config.layer_dims[layer])

    # -- persistence -------------------------------------------------------

    def clone(self, seed=None):
        new = copy.copy(self)
        new.particles = self.particles.copy()
        new.banks = [b.copy() for b in self.banks]
        new.bank_y = self.bank_y.copy()
        new.history = [list(h) for h in self.history]
        new.transition_predictive = list(self.transition_predictive)
        new.rng = copy.deepcopy(self.rng) if seed is None else np.random.default_rng(seed)
        return new

    def save(self, path):
        arrays = {}
        for l in range(self.L):
            arrays.update(omega_arrays(self.omegas[l], f"o{l}_"))
            arrays.update(self.banks[l].arrays(f"b{l}_"))
            arrays[f"x{l}"] = self.particles.states[l]
            arrays[f"history{l}"] = self.estimates(l)
        arrays.update(omega_arrays(self.omega_y, "oy_"))
        arrays.update(self.bank_y.arrays("by_"))
        arrays["log_weights"] = self.particles.log_weights
        arrays["meta"] = np.array(json.dumps({
            "kind": "gpdssm", "t": self.t, "config": self.config.to_dict(),
            "rng": self.rng.bit_generator.state,
        }))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        config = DeepConfig.from_dict(meta["config"])
        L = config.L
        member = cls(
            config,
            [omega_from_arrays(data, f"o{l}_") for l in range(L)],
            omega_from_arrays(data, "oy_"),
            pf_core.ParticleSystem([data[f"x{l}"] for l in range(L)], data["log_weights"]),
            [NIGBank.from_arrays(data, f"b{l}_") for l in range(L)],
            NIGBank.from_arrays(data, "by_"),
            rng_from_state(meta["rng"]),
            meta["t"],
        )
        member.history = [list(data[f"history{l}"]) for l in range(L)]
        return member


def propagate_layers(member, rng=None):
    return member.propagate_layers(rng)


def estimate_top_down(member, y):
    """Top-down estimates after the posteriors have absorbed ``y`` (see :meth:`DeepMember.step`)."""
    return member.estimate_top_down(member.observation_loglik(y))


def stream_weights(member, y):
    obs_ll = member.observation_loglik(y)
    _, layer_logw, layer_ll = member.estimate_top_down(obs_ll)
    return member.stream_weights(obs_ll, layer_logw, layer_ll)


def deep_step(member, y, rng=None):
    return member.step(y, rng)
