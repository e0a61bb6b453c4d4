"""Normal-inverse-Gamma Bayesian linear regression.

Model: ``y = phi.T theta + e`` with ``e ~ N(0, s2)`` and a joint
normal-inverse-Gamma prior on ``(theta, s2)`` parameterised by
``(a, b, mean, cov)``.  The posterior stays in the same family and the
one-step predictive of ``y`` is a Student's t with

    dof   = a - len(theta)
    loc   = phi.T mean
    scale = b / (1 - phi.T cov1 phi),   cov1 = (cov^-1 + phi phi.T)^-1

whose density is proportional to ``(1 + (y - loc)**2 / scale) ** (-(dof + 1) / 2)``.
In the standard three-parameter form this is a t with squared spread
``scale / dof``.

``cov`` is never formed.  Each state carries the upper-triangular Cholesky
factor ``R`` of the precision ``cov^-1 = R.T R`` and absorbs a new regressor
with a rank-1 factor update (a Givens sweep, see ``_kernels``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, logsumexp
from scipy.stats import norm
from scipy.stats import t as student_t

from . import _kernels
from .errors import InvalidSpecError, NumericalDegeneracyError

__all__ = [
    "NIGState",
    "StudentTParams",
    "NIGBank",
    "B_FLOOR",
    "SCALE_EPS",
    "default_a0",
    "nig_update",
    "predictive_params",
    "t_log_density",
    "t_sample",
    "gaussian_log_density",
    "TMixture",
]

B_FLOOR = 1e-12
SCALE_EPS = 1e-10


def default_a0(n_features):
    """Smallest integer shape that gives a predictive with two degrees of freedom."""
    return n_features + 2


@dataclass
class NIGState:
    """Normal-inverse-Gamma posterior for one output dimension of one stream."""

    a: float
    b: float
    mean: np.ndarray
    factor: np.ndarray

    def __post_init__(self):
        self.mean = np.array(self.mean, dtype=float)
        self.factor = np.array(self.factor, dtype=float, order="C")
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.factor.shape != (n, n):
            raise InvalidSpecError(
                f"mean {self.mean.shape} and factor {self.factor.shape} are inconsistent"
            )
        if not self.b > 0:
            raise InvalidSpecError(f"b must be positive, got {self.b}")
        if not np.all(np.diag(self.factor) > 0):
            raise InvalidSpecError("precision factor must have a positive diagonal")

    @classmethod
    def prior(cls, n, a0=None, b0=1.0, variance=1.0):
        """Zero-mean prior with ``cov = variance * I``."""
        a0 = default_a0(n) if a0 is None else a0
        return cls(float(a0), float(b0), np.zeros(n), np.eye(n) / np.sqrt(variance))

    @property
    def n(self):
        return self.mean.shape[0]

    @property
    def precision(self):
        R = np.triu(self.factor)
        return R.T @ R

    @property
    def cov(self):
        Rinv = np.linalg.inv(np.triu(self.factor))
        return Rinv @ Rinv.T

    def copy(self):
        return NIGState(self.a, self.b, self.mean.copy(), self.factor.copy())

    def to_dict(self):
        return {"a": self.a, "b": self.b, "mean": self.mean.tolist(),
                "factor": np.triu(self.factor).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["a"]), float(d["b"]), np.asarray(d["mean"]), np.asarray(d["factor"]))


@dataclass(frozen=True)
class StudentTParams:
    """Three-parameter Student's t; arrays broadcast elementwise."""

    dof: float
    loc: float
    scale: float

    def __post_init__(self):
        if not np.all(np.asarray(self.dof) > 0):
            raise InvalidSpecError(f"dof must be positive, got {self.dof}")
        if not np.all(np.asarray(self.scale) > 0):
            raise InvalidSpecError(f"scale must be positive, got {self.scale}")

    @property
    def spread(self):
        """Standard-form scale, ``sqrt(scale / dof)``."""
        return np.sqrt(np.asarray(self.scale) / np.asarray(self.dof))

    def quantile(self, p):
        return self.loc + self.spread * student_t.ppf(p, self.dof)


def _leverage(state, phi):
    Rp = _kernels.pack_upper(np.triu(state.factor))
    z = np.empty_like(phi)
    _kernels.forward_solve(Rp, state.n, phi, z)
    return z


def nig_update(state, phi, y, stream=None):
    """Posterior after observing ``y`` at regressor ``phi``; ``state`` is untouched.

    Computes ``cov' = (cov^-1 + phi phi.T)^-1``, ``mean' = cov' (cov^-1 mean + phi y)``
    and ``b' = b + y^2 + mean.T cov^-1 mean - mean'.T cov'^-1 mean'`` through
    one Givens sweep on the precision factor.
    """
    phi = np.ascontiguousarray(phi, dtype=float)
    if phi.shape != state.mean.shape:
        raise InvalidSpecError(f"regressor has shape {phi.shape}, state expects {state.mean.shape}")
    n = state.n
    R = np.triu(state.factor)
    Rp = _kernels.pack_upper(R)
    w = (R @ state.mean)[None, :].copy()
    e = np.array([float(y)])
    if not _kernels.rotate_in(Rp, n, phi.copy(), w, e):
        raise NumericalDegeneracyError("precision factor lost positive definiteness", stream)
    mean = np.empty(n)
    _kernels.back_solve(Rp, n, w[0], mean)
    b = max(state.b + float(e[0]) ** 2, B_FLOOR)
    return NIGState(state.a + 1.0, b, mean, _kernels.unpack_upper(Rp, n))


def predictive_params(state, phi):
    """Student's t predictive of ``y`` at regressor ``phi``."""
    phi = np.ascontiguousarray(phi, dtype=float)
    if phi.shape != state.mean.shape:
        raise InvalidSpecError(f"regressor has shape {phi.shape}, state expects {state.mean.shape}")
    dof = state.a - state.n
    if dof <= 0:
        raise InvalidSpecError(f"predictive needs a > {state.n}, got a = {state.a}")
    z = _leverage(state, phi)
    q = float(z @ z)
    # 1 - phi.T cov1 phi == 1 / (1 + q)
    if 1.0 / (1.0 + q) <= SCALE_EPS:
        raise NumericalDegeneracyError("predictive scale is degenerate")
    return StudentTParams(float(dof), float(phi @ state.mean), state.b * (1.0 + q))


def t_log_density(y, p):
    """Normalised log density of ``y`` under ``p`` (vectorised over arrays)."""
    dof = np.asarray(p.dof, dtype=float)
    scale = np.asarray(p.scale, dtype=float)
    z2 = (np.asarray(y, dtype=float) - p.loc) ** 2 / scale
    return (
        gammaln(0.5 * (dof + 1.0))
        - gammaln(0.5 * dof)
        - 0.5 * np.log(np.pi * scale)
        - 0.5 * (dof + 1.0) * np.log1p(z2)
    )


def t_sample(p, rng, size=None):
    """Draw ``loc + spread * T`` with ``T`` a standard t on ``dof`` degrees of freedom."""
    shape = size if size is not None else np.broadcast(p.dof, p.loc, p.scale).shape
    return p.loc + p.spread * rng.standard_t(p.dof, size=shape)


def gaussian_log_density(y, loc, var):
    return -0.5 * (np.log(2.0 * np.pi * var) + (np.asarray(y) - loc) ** 2 / var)


class NIGBank:
    """Posteriors for ``B`` streams that share one regressor per stream.

    Each stream has ``k`` output dimensions.  With identical priors and a
    common regressor the posterior covariance is the same for every output
    dimension of a stream, so one packed precision factor per stream is
    stored; ``b`` and ``w = R @ mean`` stay per dimension.  The shape ``a``
    grows by one per update for every stream and is held as a scalar.

    Resampling is deferred: the copies are folded into the next
    :meth:`begin_update`, and any earlier access to the arrays performs them.
    """

    def __init__(self, a, packed, w, b, n):
        self.a = float(a)
        self._packed = np.ascontiguousarray(packed, dtype=float)
        self._w = np.ascontiguousarray(w, dtype=float)
        self._b = np.ascontiguousarray(b, dtype=float)
        self.n = int(n)
        self.n_floor = 0
        self._pending = None
        self._ancestors = None

    @classmethod
    def prior(cls, B, k, n, a0=None, b0=1.0, variance=1.0):
        a0 = default_a0(n) if a0 is None else a0
        if a0 <= n:
            raise InvalidSpecError(f"prior shape a0={a0} must exceed the feature count {n}")
        one = _kernels.pack_upper(np.eye(n) / np.sqrt(variance))
        packed = np.tile(one, (B, 1))
        return cls(a0, packed, np.zeros((B, k, n)), np.full((B, k), float(b0)), n)

    def _settle(self):
        if self._ancestors is not None:
            _kernels.copy_streams(self._packed, self._w, self._b, self._ancestors)
            self._ancestors = None

    @property
    def packed(self):
        self._settle()
        return self._packed

    @property
    def w(self):
        self._settle()
        return self._w

    @property
    def b(self):
        self._settle()
        return self._b

    @property
    def B(self):
        return self._packed.shape[0]

    @property
    def k(self):
        return self._w.shape[1]

    @property
    def dof(self):
        return self.a - self.n

    @property
    def mean(self):
        out = np.empty_like(self.w)
        _kernels.bank_means(self.packed, self.w, out)
        return out

    def factor(self, stream):
        return _kernels.unpack_upper(self.packed[stream], self.n)

    def predict(self, phi):
        """Predictive ``(loc, q)``: ``loc`` is (B, k), leverage ``q = phi.T cov phi`` is (B,)."""
        phi = np.ascontiguousarray(phi, dtype=float)
        loc = np.empty((self.B, self.k))
        q = np.empty(self.B)
        _kernels.bank_predict(self.packed, self.w, phi, loc, q)
        return loc, q

    def begin_update(self, phi):
        """Rotate ``phi`` into every factor and return the pre-update predictive.

        Returns ``(loc, q, b)`` where ``loc`` is (B, k), the leverage
        ``q = phi.T cov phi`` is (B,) and ``b`` is a copy of the current
        scales; the predictive t has ``scale = b * (1 + q)`` and ``dof`` as
        before the update.  :meth:`finish_update` must follow with the targets.
        """
        if self._pending is not None:
            raise RuntimeError("previous update was not finished")
        phi = np.ascontiguousarray(phi, dtype=float)
        if phi.shape != (self.B, self.n):
            raise InvalidSpecError(f"regressors have shape {phi.shape}, bank expects {(self.B, self.n)}")
        loc = np.empty((self.B, self.k))
        q = np.empty(self.B)
        rot_c = np.empty((self.B, self.n))
        rot_s = np.empty((self.B, self.n))
        anc = self._ancestors if self._ancestors is not None else np.arange(self.B)
        self._ancestors = None
        bad = _kernels.bank_begin(self._packed, self._w, self._b, phi, loc, q, rot_c, rot_s, anc)
        if bad >= 0:
            raise NumericalDegeneracyError("precision factor lost positive definiteness", int(bad))
        self._pending = (rot_c, rot_s)
        return loc, q, self._b.copy()

    def finish_update(self, y):
        if self._pending is None:
            raise RuntimeError("finish_update called without begin_update")
        y = np.ascontiguousarray(y, dtype=float).reshape(self.B, self.k)
        rot_c, rot_s = self._pending
        self.n_floor += int(_kernels.bank_finish(self._w, self._b, y, rot_c, rot_s, B_FLOOR))
        self.a += 1.0
        self._pending = None

    def update(self, phi, y):
        """Absorb one observation per stream; returns the pre-update predictive."""
        out = self.begin_update(phi)
        self.finish_update(y)
        return out

    def resample(self, ancestors):
        """Stream ``m`` becomes a copy of ``ancestors[m]`` (sources must map to themselves)."""
        if self._pending is not None:
            raise RuntimeError("cannot resample between begin_update and finish_update")
        self._settle()
        self._ancestors = np.array(ancestors, dtype=np.int64)

    def state(self, stream, dim=0):
        """Standalone :class:`NIGState` for one stream and output dimension."""
        R = self.factor(stream)
        mean = np.linalg.solve(R, self.w[stream, dim])
        return NIGState(self.a, float(self.b[stream, dim]), mean, R)

    def copy(self):
        new = NIGBank(self.a, self.packed.copy(), self.w.copy(), self.b.copy(), self.n)
        new.n_floor = self.n_floor
        return new

    def arrays(self, prefix):
        return {f"{prefix}a": np.array(self.a), f"{prefix}n": np.array(self.n),
                f"{prefix}packed": self.packed, f"{prefix}w": self.w, f"{prefix}b": self.b}

    @classmethod
    def from_arrays(cls, data, prefix):
        return cls(float(data[f"{prefix}a"]), data[f"{prefix}packed"], data[f"{prefix}w"],
                   data[f"{prefix}b"], int(data[f"{prefix}n"]))


def _logpdf_spread(y, loc, spread, dof):
    """Log density of ``loc + spread * T_dof``; ``dof = inf`` gives a normal."""
    z = (np.asarray(y, dtype=float) - loc) / spread
    dof = np.broadcast_to(np.asarray(dof, dtype=float), np.shape(z))
    out = np.empty(np.shape(z))
    gauss = np.isinf(dof)
    if np.any(gauss):
        out[gauss] = -0.5 * (np.log(2.0 * np.pi) + z[gauss] ** 2)
    t = ~gauss
    if np.any(t):
        nu = dof[t]
        out[t] = (gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu) - 0.5 * np.log(np.pi * nu)
                  - 0.5 * (nu + 1.0) * np.log1p(z[t] ** 2 / nu))
    return out - np.log(spread)


@dataclass
class TMixture:
    """Weighted mixture of ``K`` independent-per-dimension t components.

    ``loc`` and ``spread`` are (K, k); ``dof`` broadcasts against them and
    ``inf`` entries denote Gaussian components.  ``weights`` sum to one.
    """

    weights: np.ndarray
    loc: np.ndarray
    spread: np.ndarray
    dof: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.loc = np.atleast_2d(np.asarray(self.loc, dtype=float))
        self.spread = np.broadcast_to(np.asarray(self.spread, dtype=float), self.loc.shape)
        self.dof = np.broadcast_to(np.asarray(self.dof, dtype=float).reshape(-1, 1)
                                   if np.ndim(self.dof) == 1 else np.asarray(self.dof, dtype=float),
                                   self.loc.shape)

    @classmethod
    def from_params(cls, p, weights=None):
        loc = np.atleast_2d(p.loc)
        if weights is None:
            weights = np.full(loc.shape[0], 1.0 / loc.shape[0])
        return cls(weights, loc, np.sqrt(np.asarray(p.scale) / np.asarray(p.dof)), p.dof)

    @classmethod
    def combine(cls, mixtures, weights):
        """Flatten a weighted mixture of mixtures."""
        weights = np.asarray(weights, dtype=float)
        return cls(
            np.concatenate([w * m.weights for w, m in zip(weights, mixtures)]),
            np.concatenate([m.loc for m in mixtures]),
            np.concatenate([m.spread for m in mixtures]),
            np.concatenate([m.dof for m in mixtures]),
        )

    @property
    def k(self):
        return self.loc.shape[1]

    def mean(self):
        return self.weights @ self.loc

    def component_log_density(self, y):
        """(K,) joint log density of the vector ``y`` under each component."""
        return _logpdf_spread(np.asarray(y)[None, :], self.loc, self.spread, self.dof).sum(axis=1)

    def log_density(self, y):
        """Joint log density of ``y`` under the mixture."""
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return float(logsumexp(logw + self.component_log_density(y)))

    def marginal_log_density(self, y, dim):
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        comp = _logpdf_spread(y, self.loc[:, dim], self.spread[:, dim], self.dof[:, dim])
        return float(logsumexp(logw + comp))

    def marginal_cdf(self, y, dim):
        z = (y - self.loc[:, dim]) / self.spread[:, dim]
        dof = self.dof[:, dim]
        cdf = np.where(np.isinf(dof), norm.cdf(z), student_t.cdf(z, np.where(np.isinf(dof), 1.0, dof)))
        return float(self.weights @ cdf)

    def quantile(self, p, dim):
        """Quantile of the marginal in ``dim`` by bracketing and Brent's method."""
        from scipy.optimize import brentq
        dof = self.dof[:, dim]
        zq = np.where(np.isinf(dof), norm.ppf(p), student_t.ppf(p, np.where(np.isinf(dof), 1.0, dof)))
        cand = self.loc[:, dim] + self.spread[:, dim] * zq
        lo, hi = float(cand.min()), float(cand.max())
        if hi - lo < 1e-300:
            return lo
        return brentq(lambda v: self.marginal_cdf(v, dim) - p, lo, hi, xtol=1e-10 * max(1.0, abs(hi)))

    def interval(self, level=0.95):
        """Central interval per dimension as ``(lower, upper)`` arrays."""
        a = 0.5 * (1.0 - level)
        lower = np.array([self.quantile(a, j) for j in range(self.k)])
        upper = np.array([self.quantile(1.0 - a, j) for j in range(self.k)])
        return lower, upper
