"""Sequential GP state-space filter with per-stream conjugate posteriors.

Transition and observation functions are random-feature GPs,

    x_t = H.T phi_x(x_{t-1}) + u_t,        y_t = Theta.T phi_y(x_t) + v_t,

and every particle stream keeps its own normal-inverse-Gamma posterior over
each column of ``H`` and ``Theta`` together with the noise variance.  The
weights never integrate over those parameters with particles: propagation
and weighting both use the closed-form Student's t predictives.

One call to :meth:`GpssmMember.step` runs, in order: propagate, update the
transition posteriors, update the observation posteriors, weigh, normalize,
compute the MMSE estimate, resample.  Weights use the observation predictive
evaluated *before* the observation posteriors absorb ``y_t``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from . import pf_core
from .conjugate_blr import NIGBank, TMixture, _logpdf_spread
from .errors import ConfigError
from .spectral_features import (
    FrequencySet,
    KernelSpec,
    derive_seed,
    feature_matrix,
    sample_frequencies,
)

__all__ = ["FilterConfig", "StepResult", "GpssmMember", "init", "propagate",
           "update_transition_posteriors", "update_observation_posteriors", "weigh", "step"]

LIKELIHOODS = ("student_t", "gaussian")


def _kernel(value):
    if isinstance(value, KernelSpec):
        return value
    if isinstance(value, dict):
        return KernelSpec(tuple(np.atleast_1d(value["lengthscales"])),
                          value.get("variance", 1.0), value.get("family", "rbf"))
    return KernelSpec(tuple(np.atleast_1d(value)))


@dataclass(frozen=True)
class FilterConfig:
    """Sizes, priors and switches for one filter.

    ``a0_x``/``a0_y`` default to ``2J + 2``.  ``likelihood="gaussian"``
    replaces the unknown-variance model by a Gaussian with the fixed noise
    variance ``gaussian_variance`` (an ablation, not the default).
    """

    d_x: int
    d_y: int
    M: int = 500
    J_x: int = 50
    J_y: int = 50
    kernel_x: KernelSpec = field(default_factory=lambda: KernelSpec((1.0,)))
    kernel_y: KernelSpec = field(default_factory=lambda: KernelSpec((1.0,)))
    a0_x: float | None = None
    a0_y: float | None = None
    b0: float = 1.0
    resample: str = "always"
    shared_params: bool = False
    likelihood: str = "student_t"
    gaussian_variance: float = 0.1
    max_bank_bytes: float = 2e9

    def __post_init__(self):
        object.__setattr__(self, "kernel_x", _kernel(self.kernel_x))
        object.__setattr__(self, "kernel_y", _kernel(self.kernel_y))
        self.validate()

    @property
    def n_x(self):
        return 2 * self.J_x

    @property
    def n_y(self):
        return 2 * self.J_y

    def validate(self):
        for name in ("d_x", "M", "J_x", "J_y"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if int(self.d_y) < 0:
            raise ConfigError(f"d_y must be >= 0, got {self.d_y}")
        for name, n in (("a0_x", self.n_x), ("a0_y", self.n_y)):
            a0 = getattr(self, name)
            if a0 is not None and not a0 > n:
                raise ConfigError(f"{name}={a0} must exceed 2J={n}")
        if not self.b0 > 0:
            raise ConfigError(f"b0 must be positive, got {self.b0}")
        if self.resample not in pf_core.RESAMPLE_MODES:
            raise ConfigError(f"resample must be one of {pf_core.RESAMPLE_MODES}")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"likelihood must be one of {LIKELIHOODS}")
        if not self.gaussian_variance > 0:
            raise ConfigError("gaussian_variance must be positive")
        streams = 1 if self.shared_params else self.M
        nbytes = 8 * streams * (self.n_x * (self.n_x + 1) // 2 + self.n_y * (self.n_y + 1) // 2)
        if nbytes > self.max_bank_bytes:
            raise ConfigError(
                f"posterior factors need {nbytes / 1e9:.2f} GB, above max_bank_bytes="
                f"{self.max_bank_bytes / 1e9:.2f} GB; reduce M or J"
            )

    def to_dict(self):
        d = asdict(self)
        d["kernel_x"] = asdict(self.kernel_x)
        d["kernel_y"] = asdict(self.kernel_y)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class StepResult:
    """Output of one filter step.

    ``predictive`` is the one-step predictive of ``y_t`` given ``Y_{t-1}``:
    a mixture over streams weighted by the pre-step stream weights.
    """

    x_hat: np.ndarray
    log_evidence_increment: float
    predictive: TMixture
    weights: np.ndarray
    ess: float


def predictive_spread(b, q, dof, likelihood, gaussian_variance):
    """Standard-form spread of the per-stream predictive.

    Student's t: ``sqrt(b (1 + q) / dof)``.  Gaussian ablation:
    ``sqrt(var (1 + q))``.
    """
    if likelihood == "gaussian":
        return np.sqrt(gaussian_variance * (1.0 + q))[:, None] * np.ones_like(b)
    return np.sqrt(b * (1.0 + q)[:, None] / dof)


def sample_predictive(loc, spread, dof, rng, noise=None):
    """``loc + spread * z`` with ``z`` standard t (normal when ``dof`` is inf)."""
    if noise is None:
        noise = rng.standard_normal(loc.shape) if np.isinf(dof) else rng.standard_t(dof, size=loc.shape)
    return loc + spread * noise


def omega_arrays(omega, prefix):
    return {prefix + "w": omega.frequencies,
            prefix + "meta": np.array(json.dumps({"seed": omega.seed, "kernel": asdict(omega.source)}))}


def omega_from_arrays(data, prefix):
    meta = json.loads(str(data[prefix + "meta"]))
    return FrequencySet(data[prefix + "w"], meta["seed"], _kernel(meta["kernel"]))


def rng_from_state(state):
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


class _SharedBank:
    """One posterior shared by all streams (``shared_params=True``).

    Predictions are made at every stream's regressor; the posterior absorbs a
    single pair per step, the MMSE regressor and target.
    """

    def __init__(self, k, n, a0, b0, variance):
        self.bank = NIGBank.prior(1, k, n, a0, b0, variance)

    @property
    def a(self):
        return self.bank.a

    @property
    def dof(self):
        return self.bank.dof

    def predict(self, phi):
        R = self.bank.factor(0)
        z = solve_triangular(R, np.asarray(phi).T, trans="T", lower=False)
        q = np.sum(z * z, axis=0)
        loc = z.T @ self.bank.w[0].T
        return loc, q, np.broadcast_to(self.bank.b, (phi.shape[0], self.bank.k)).copy()

    def update(self, phi, y):
        self.bank.update(np.asarray(phi)[None, :], np.asarray(y)[None, :])

    def resample(self, ancestors):
        pass

    def copy(self):
        new = copy.copy(self)
        new.bank = self.bank.copy()
        return new


class GpssmMember:
    """Single-member GP-SSM particle filter with per-stream posteriors."""

    def __init__(self, config, omega_x, omega_y, particles, bank_x, bank_y, rng, t=0):
        self.config = config
        self.omega_x = omega_x
        self.omega_y = omega_y
        self.particles = particles
        self.bank_x = bank_x
        self.bank_y = bank_y
        self.rng = rng
        self.t = t
        self.history = []
        self._obs_pred = None

    @classmethod
    def init(cls, config, seed, omega_x=None, omega_y=None):
        """Fresh member: frequency draws, priors and particles from ``seed``."""
        c = config
        if omega_x is None:
            omega_x = sample_frequencies(c.kernel_x, c.J_x, c.d_x, derive_seed(seed, 0, 0))
        if omega_y is None:
            omega_y = sample_frequencies(c.kernel_y, c.J_y, c.d_x, derive_seed(seed, 1))
        if omega_x.J != c.J_x or omega_x.d != c.d_x or omega_y.J != c.J_y or omega_y.d != c.d_x:
            raise ConfigError("frequency sets do not match the configured J and d_x")
        rng = np.random.default_rng(derive_seed(seed, 2))
        x0 = rng.standard_normal((c.M, c.d_x))
        if c.shared_params:
            bank_x = _SharedBank(c.d_x, c.n_x, c.a0_x, c.b0, c.kernel_x.variance)
            bank_y = _SharedBank(c.d_y, c.n_y, c.a0_y, c.b0, c.kernel_y.variance)
        else:
            bank_x = NIGBank.prior(c.M, c.d_x, c.n_x, c.a0_x, c.b0, c.kernel_x.variance)
            bank_y = NIGBank.prior(c.M, c.d_y, c.n_y, c.a0_y, c.b0, c.kernel_y.variance)
        return cls(c, omega_x, omega_y, pf_core.ParticleSystem([x0]), bank_x, bank_y, rng)

    # -- accessors ---------------------------------------------------------

    @property
    def M(self):
        return self.config.M

    @property
    def x(self):
        return self.particles.states[0]

    def transition_state(self, stream, dim):
        return self.bank_x.state(stream, dim)

    def observation_state(self, stream, dim):
        return self.bank_y.state(stream, dim)

    # -- filter steps ------------------------------------------------------

    def propagate(self, rng=None, noise=None):
        """Draw ``x_t`` for every stream and dimension from its t predictive.

        ``noise`` optionally supplies the standardized (M, d_x) draws, which
        are otherwise taken from ``rng``.
        """
        rng = self.rng if rng is None else rng
        c = self.config
        phi = feature_matrix(self.x, self.omega_x)
        if c.shared_params:
            loc, q, b = self.bank_x.predict(phi)
        else:
            loc, q, b = self.bank_x.begin_update(phi)
        dof = self.bank_x.dof
        spread = predictive_spread(b, q, dof, c.likelihood, c.gaussian_variance)
        dof = dof if c.likelihood == "student_t" else np.inf
        self.transition_predictive = (loc, spread, dof)
        self.particles.states[0] = sample_predictive(loc, spread, dof, rng, noise)
        self.t += 1
        return self.x

    def update_transition_posteriors(self):
        if self.config.shared_params:
            return
        self.bank_x.finish_update(self.x)

    def update_observation_posteriors(self, y):
        """Absorb ``y_t`` into every stream, caching the pre-update predictive."""
        c = self.config
        phi = feature_matrix(self.x, self.omega_y)
        if c.shared_params:
            loc, q, b = self.bank_y.predict(phi)
        else:
            loc, q, b = self.bank_y.update(phi, np.broadcast_to(y, (self.M, c.d_y)))
        dof = self.bank_y.dof - (0 if c.shared_params else 1)
        spread = predictive_spread(b, q, dof, c.likelihood, c.gaussian_variance)
        self._obs_pred = (loc, spread, dof if c.likelihood == "student_t" else np.inf)
        return self._obs_pred

    def weigh(self, y):
        """Per-stream log-likelihood of ``y_t``: a sum of ``d_y`` t log-densities."""
        loc, spread, dof = self._obs_pred
        return _logpdf_spread(np.asarray(y, dtype=float)[None, :], loc, spread, dof).sum(axis=1)

    def _update_shared(self, x_hat, y):
        x_hat_prev = self.particles_prev_mean
        phi_x = feature_matrix(x_hat_prev[None, :], self.omega_x)[0]
        phi_y = feature_matrix(x_hat[None, :], self.omega_y)[0]
        self.bank_x.update(phi_x, x_hat)
        self.bank_y.update(phi_y, y)

    def step(self, y, rng=None):
        rng = self.rng if rng is None else rng
        y = np.asarray(y, dtype=float).reshape(self.config.d_y)
        prev_logw = self.particles.log_weights
        prev_w = np.exp(prev_logw)
        if self.config.shared_params:
            self.particles_prev_mean = pf_core.mmse(self.x, prev_w)
        self.propagate(rng)
        self.update_transition_posteriors()
        self.update_observation_posteriors(y)
        loglik = self.weigh(y)
        combined = prev_logw + loglik
        weights, _ = pf_core.normalize_log_weights(combined)
        increment = float(logsumexp(combined))
        x_hat = pf_core.mmse(self.x, weights)
        if self.config.shared_params:
            self._update_shared(x_hat, y)
        loc, spread, dof = self._obs_pred
        predictive = TMixture(prev_w, loc, spread, dof)
        self._finish(weights, rng)
        self.history.append(x_hat)
        return StepResult(x_hat, increment, predictive, weights, pf_core.ess(weights))

    def _finish(self, weights, rng):
        """Resample streams (or keep weights in ESS mode) with their posteriors."""
        c = self.config
        if c.resample == "ess" and pf_core.ess(weights) >= c.M / 2:
            self.particles.log_weights = np.log(weights)
            return
        idx = pf_core.systematic_resample(weights, c.M, rng)
        ancestors = pf_core.in_place_ancestors(idx)
        self.particles.resample(ancestors)
        self.bank_x.resample(ancestors)
        self.bank_y.resample(ancestors)
        self.ancestors = ancestors

    def estimates(self):
        """(t, d_x) array of MMSE estimates recorded so far."""
        return np.array(self.history).reshape(-1, self.config.d_x)

    # -- persistence -------------------------------------------------------

    def clone(self, seed=None):
        """Deep copy; with ``seed`` the clone draws from a fresh random stream."""
        new = copy.copy(self)
        new.particles = self.particles.copy()
        new.bank_x = self.bank_x.copy()
        new.bank_y = self.bank_y.copy()
        new.history = list(self.history)
        new.rng = copy.deepcopy(self.rng) if seed is None else np.random.default_rng(seed)
        return new

    def save(self, path):
        """Checkpoint as ``.npz``: frequency sets, posteriors, particles, ``t`` and RNG state."""
        if self.config.shared_params:
            raise NotImplementedError("checkpointing supports per-stream posteriors only")
        arrays = {}
        arrays.update(omega_arrays(self.omega_x, "ox_"))
        arrays.update(omega_arrays(self.omega_y, "oy_"))
        arrays.update(self.bank_x.arrays("bx_"))
        arrays.update(self.bank_y.arrays("by_"))
        arrays["x"] = self.x
        arrays["log_weights"] = self.particles.log_weights
        arrays["history"] = self.estimates()
        arrays["meta"] = np.array(json.dumps({
            "kind": "gpssm", "t": self.t, "config": self.config.to_dict(),
            "rng": self.rng.bit_generator.state,
        }))
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        config = FilterConfig.from_dict(meta["config"])
        rng = rng_from_state(meta["rng"])
        member = cls(config, omega_from_arrays(data, "ox_"), omega_from_arrays(data, "oy_"),
                     pf_core.ParticleSystem([data["x"]], data["log_weights"]),
                     NIGBank.from_arrays(data, "bx_"), NIGBank.from_arrays(data, "by_"),
                     rng, meta["t"])
        member.history = list(data["history"])
        return member


# Functional aliases mirroring the operation names.

def init(config, seed, **kw):
    return GpssmMember.init(config, seed, **kw)


def propagate(member, rng=None):
    return member.propagate(rng)


def update_transition_posteriors(member):
    member.update_transition_posteriors()


def update_observation_posteriors(member, y):
    return member.update_observation_posteriors(y)


def weigh(member, y):
    return member.weigh(y)


def step(member, y, rng=None):
    return member.step(y, rng)
