"""Synthetic benchmark generators.

Four generative models:

* ``A``: two-dimensional nonlinear latent process, scalar observation.
* ``B``: five-dimensional random-feature latent process observed through
  100 random-feature channels.
* ``C``: ten-dimensional ring-coupled latent process observed through a
  draw from a GP with a dot-product plus Matern-3/2 kernel.
* ``D``: two stacked latent layers of dimensions 2 and 3, four
  observation channels.

Every generator starts from ``x_0 = 0`` and is deterministic given its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky

from .errors import InvalidSpecError, NumericalDegeneracyError

__all__ = [
    "SyntheticRun",
    "gen_A",
    "gen_B",
    "gen_C",
    "gen_D",
    "GENERATORS",
    "generate",
    "matern32",
    "dot_product_kernel",
    "GEN_C_LENGTHSCALES",
]

GEN_C_LENGTHSCALES = tuple(10.0**k for k in range(-5, 5))
GEN_C_MAX_T = 5000


@dataclass
class SyntheticRun:
    """Latent truth (one array per layer), observations and provenance."""

    latent: list
    observations: np.ndarray
    generator: str
    seed: int
    noise: dict = field(default_factory=dict)

    @property
    def truth(self):
        """Root-layer latent trajectory."""
        return self.latent[0]

    @property
    def T(self):
        return self.observations.shape[0]

    def save(self, out_dir, prefix=None):
        """Write ``<prefix>_truth[_layerL].csv`` and ``<prefix>_obs.csv``; returns the paths."""
        from .alignment import save_trajectory
        from .metrics_io import save_observations

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        prefix = prefix or f"gen{self.generator}_seed{self.seed}"
        paths = []
        for l, X in enumerate(self.latent):
            suffix = "" if len(self.latent) == 1 else f"_layer{l + 1}"
            p = out_dir / f"{prefix}_truth{suffix}.csv"
            save_trajectory(X, p, t0=1)
            paths.append(p)
        p = out_dir / f"{prefix}_obs.csv"
        save_observations(self.observations, p, t0=1)
        paths.append(p)
        return paths


def _check_T(T):
    if int(T) < 1:
        raise InvalidSpecError(f"T must be >= 1, got {T}")
    return int(T)


def _noise(rng, var, shape):
    return np.sqrt(var) * rng.standard_normal(shape) if var > 0 else np.zeros(shape)


def gen_A(T=2000, seed=0, var_u=0.001, var_v=0.001):
    """Two-dimensional latent process with a scalar polynomial/rational observation."""
    T = _check_T(T)
    rng = np.random.default_rng(seed)
    U = _noise(rng, var_u, (T, 2))
    V = _noise(rng, var_v, T)
    X = np.empty((T, 2))
    x1 = x2 = 0.0
    for t in range(T):
        x1, x2 = (0.9 * x1 + 0.5 * np.sin(x2) + U[t, 0],
                  0.5 * np.cos(x1) + 0.9 * x2 + U[t, 1])
        X[t] = x1, x2
    a, b = X[:, 0], X[:, 1]
    y = (0.3 * np.sin(a) - 0.3 * a + 0.2 * b + 0.25 * a * b + (0.05 * a) ** 2
         + 0.01 * a**3 - 0.25 * a / (1.0 + b**2)) + V
    return SyntheticRun([X], y[:, None], "A", seed, {"var_u": var_u, "var_v": var_v})


def _trig_features(X, omega):
    """Unscaled ``[sin(X w_1..w_J), cos(X w_1..w_J)]`` (sine block, then cosine block)."""
    proj = np.atleast_2d(X) @ omega.T
    return np.hstack([np.sin(proj), np.cos(proj)])


def gen_B(T=2000, seed=0, var_u=0.001, var_v=0.001, J=50, d_x=5, d_y=100):
    """Random-feature latent process and observations with uniform parameter draws.

    Frequencies are uniform on [-10, 10]; the weights ``eta`` (one per latent
    dimension) and ``theta`` (one per observation channel) are uniform on
    [-0.01, 0.01].
    """
    T = _check_T(T)
    rng = np.random.default_rng(seed)
    omega_x = rng.uniform(-10, 10, (J, d_x))
    omega_y = rng.uniform(-10, 10, (J, d_x))
    eta = rng.uniform(-0.01, 0.01, (2 * J, d_x))
    theta = rng.uniform(-0.01, 0.01, (2 * J, d_y))
    U = _noise(rng, var_u, (T, d_x))
    V = _noise(rng, var_v, (T, d_y))
    X = np.empty((T, d_x))
    x = np.zeros(d_x)
    for t in range(T):
        x = _trig_features(x, omega_x)[0] @ eta + U[t]
        X[t] = x
    Y = _trig_features(X, omega_y) @ theta + V
    params = {"omega_x": omega_x, "omega_y": omega_y, "eta": eta, "theta": theta}
    run = SyntheticRun([X], Y, "B", seed, {"var_u": var_u, "var_v": var_v})
    run.params = params
    return run


def dot_product_kernel(X1, X2, variance=20.0):
    """``variance * X1 @ X2.T``."""
    return variance * np.asarray(X1) @ np.asarray(X2).T


def matern32(X1, X2, lengthscales, variance=1.0):
    """Matern kernel with smoothness 3/2 and per-dimension lengthscales."""
    ls = np.asarray(lengthscales, dtype=float)
    A = np.asarray(X1) / ls
    B = np.asarray(X2) / ls
    sq = np.sum(A * A, 1)[:, None] + np.sum(B * B, 1)[None, :] - 2.0 * A @ B.T
    r = np.sqrt(3.0 * np.maximum(sq, 0.0))
    return variance * (1.0 + r) * np.exp(-r)


def gen_C(T=1000, seed=0, var_u=0.1, var_v=0.1, var_dp=20.0, lengthscales=GEN_C_LENGTHSCALES,
          jitter=1e-8, normalize=True):
    """Ring-coupled latent process observed through one GP draw.

    ``x_t[i] = 0.9 x_{t-1}[i] + g_i(x_{t-1}[i+1]) / 2 + u_t[i]`` with the
    index wrapping from 10 to 1, ``g_i = sin`` for odd ``i`` and ``cos``
    for even ``i`` (1-based).  The observation function is sampled jointly
    at the visited states, which is equivalent to drawing it one point at a
    time from its conditional.  Observations are z-scored when ``normalize``.
    """
    T = _check_T(T)
    if T > GEN_C_MAX_T:
        raise InvalidSpecError(f"gen_C draws a dense GP; T must be <= {GEN_C_MAX_T}")
    d = len(lengthscales)
    rng = np.random.default_rng(seed)
    U = _noise(rng, var_u, (T, d))
    odd = (np.arange(d) % 2) == 0  # 1-based odd indices
    X = np.empty((T, d))
    x = np.zeros(d)
    for t in range(T):
        nxt = np.roll(x, -1)
        g = np.where(odd, np.sin(nxt), np.cos(nxt))
        x = 0.9 * x + 0.5 * g + U[t]
        X[t] = x
    K = dot_product_kernel(X, X, var_dp) + matern32(X, X, lengthscales)
    scale = np.mean(np.diag(K))
    for jit in (jitter, jitter * 1e2, jitter * 1e4):
        try:
            L = cholesky(K + jit * scale * np.eye(T), lower=True)
            break
        except np.linalg.LinAlgError:
            continue
    else:
        raise NumericalDegeneracyError("gen_C Gram matrix is not positive definite even with jitter")
    f = L @ rng.standard_normal(T)
    y = f + _noise(rng, var_v, T)
    if normalize:
        y = (y - y.mean()) / y.std()
    run = SyntheticRun([X], y[:, None], "C", seed, {"var_u": var_u, "var_v": var_v})
    run.f = f
    return run


def gen_D(T=2000, seed=0, var_u=0.01, var_v=0.01):
    """Two latent layers (dims 2 and 3) and four observation channels.

    Noise terms are independent across every dimension.
    """
    T = _check_T(T)
    rng = np.random.default_rng(seed)
    U1 = _noise(rng, var_u, (T, 2))
    U2 = _noise(rng, var_u, (T, 3))
    V = _noise(rng, var_v, (T, 4))
    X1 = np.empty((T, 2))
    a = b = 0.0
    for t in range(T):
        a, b = (0.9 * a + 0.5 * np.sin(a) + U1[t, 0],
                0.5 * np.sin(a) + 0.9 * b + U1[t, 1])
        X1[t] = a, b
    a, b = X1[:, 0], X1[:, 1]
    X2 = np.column_stack([
        1.8 * np.cos(a) - 0.7 * np.sin(a),
        0.5 * a - 1.3 * np.sin(b),
        2.0 * a - 0.4 * b,
    ]) + U2
    p, q, r = X2[:, 0], X2[:, 1], X2[:, 2]
    Y = np.column_stack([
        0.01 * p**2 + 1.2 * r,
        1.2 * np.sin(p) - 0.5 * q + 0.7 * r,
        p * q,
        5.0 * q / (1.0 + q**2),
    ]) + V
    return SyntheticRun([X1, X2], Y, "D", seed, {"var_u": var_u, "var_v": var_v})


GENERATORS = {"A": gen_A, "B": gen_B, "C": gen_C, "D": gen_D}


def generate(name, T, seed, **kw):
    try:
        fn = GENERATORS[name.upper()]
    except KeyError:
        raise InvalidSpecError(f"unknown generator {name!r}; choose from {sorted(GENERATORS)}") from None
    return fn(T=T, seed=seed, **kw)
