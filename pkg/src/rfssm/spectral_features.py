"""Random Fourier feature maps and kernel dictionaries.

A feature map is defined by ``J`` frequency vectors drawn from the spectral
density of a shift-invariant kernel.  For an input ``x`` the map returns the
interleaved vector ``[sin(x.w1), cos(x.w1), ..., sin(x.wJ), cos(x.wJ)] / sqrt(J)``
so that ``phi(x) @ phi(x')`` approximates ``k(x, x')`` for a unit-variance
kernel.  The interleaved order is part of the on-disk contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, SchemaError

__all__ = [
    "KernelSpec",
    "FrequencySet",
    "derive_seed",
    "sample_frequencies",
    "feature_map",
    "feature_matrix",
    "build_dictionary",
    "PAPER_GRID",
    "save_frequencies",
    "load_frequencies",
]

PAPER_GRID = tuple(10.0**k for k in range(-4, 5))

_FAMILIES = ("rbf",)


def derive_seed(seed, *key):
    """Hash ``(seed, *key)`` into an independent 64-bit integer seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class KernelSpec:
    """Shift-invariant kernel whose spectral density seeds a feature map."""

    lengthscales: tuple
    variance: float = 1.0
    family: str = "rbf"

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        if self.family not in _FAMILIES:
            raise InvalidSpecError(f"unsupported kernel family {self.family!r}")
        if not ls:
            raise InvalidSpecError("at least one lengthscale is required")
        if not all(np.isfinite(v) and v > 0 for v in ls):
            raise InvalidSpecError(f"lengthscales must be positive, got {ls}")
        if not (np.isfinite(self.variance) and self.variance > 0):
            raise InvalidSpecError(f"variance must be positive, got {self.variance}")

    def broadcast(self, d):
        """Lengthscale vector of length ``d`` (a single value is repeated)."""
        ls = np.asarray(self.lengthscales)
        if ls.size == 1:
            return np.full(d, ls[0])
        if ls.size != d:
            raise InvalidSpecError(f"kernel has {ls.size} lengthscales, input dim is {d}")
        return ls

    def __call__(self, x1, x2):
        """Exact kernel value ``variance * exp(-|x1 - x2|^2_l / 2)``."""
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        ls = self.broadcast(x1.shape[-1])
        r2 = np.sum(((x1 - x2) / ls) ** 2, axis=-1)
        return self.variance * np.exp(-0.5 * r2)


@dataclass(frozen=True, eq=False)
class FrequencySet:
    """``J`` frequency vectors of input dimension ``d``, reproducible from ``seed``."""

    frequencies: np.ndarray
    seed: int
    source: KernelSpec

    def __post_init__(self):
        w = np.array(self.frequencies, dtype=float, order="C")
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise InvalidSpecError(f"frequencies must be a J x d matrix, got shape {w.shape}")
        w.setflags(write=False)
        object.__setattr__(self, "frequencies", w)

    @property
    def J(self):
        return self.frequencies.shape[0]

    @property
    def d(self):
        return self.frequencies.shape[1]

    @property
    def n_features(self):
        return 2 * self.J

    def __eq__(self, other):
        if not isinstance(other, FrequencySet):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.source == other.source
            and np.array_equal(self.frequencies, other.frequencies)
        )

    def __hash__(self):
        return hash((self.seed, self.source, self.frequencies.tobytes()))


def sample_frequencies(spec, J, d, seed):
    """Draw ``J`` frequencies from the spectral density of ``spec``.

    For an RBF kernel with lengthscales ``l`` each frequency is an
    independent ``N(0, diag(1 / l**2))`` draw.
    """
    if int(J) < 1 or int(d) < 1:
        raise InvalidSpecError(f"need J >= 1 and d >= 1, got J={J}, d={d}")
    ls = spec.broadcast(int(d))
    rng = np.random.default_rng(int(seed))
    w = rng.standard_normal((int(J), int(d))) / ls
    return FrequencySet(w, int(seed), spec)


def feature_matrix(X, omega):
    """Feature rows for a batch of inputs ``X`` of shape ``(n, d)``.

    Returns an ``(n, 2J)`` array.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != omega.d:
        raise InvalidSpecError(f"inputs have shape {X.shape}, feature map expects d={omega.d}")
    proj = X @ omega.frequencies.T
    out = np.empty((X.shape[0], 2 * omega.J))
    scale = 1.0 / np.sqrt(omega.J)
    np.sin(proj, out=out[:, 0::2])
    np.cos(proj, out=out[:, 1::2])
    out *= scale
    return out


def feature_map(x, omega):
    """Feature vector of length ``2J`` for a single input vector ``x``."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise InvalidSpecError(f"expected a vector input, got shape {x.shape}")
    return feature_matrix(x[None, :], omega)[0]


def build_dictionary(grid, S, J, d, seed, variance=1.0):
    """Kernel dictionary of ``S`` RBF frequency sets.

    Each member's per-dimension lengthscales are drawn uniformly from
    ``grid``; member ``s`` depends only on ``(seed, s)``.
    """
    grid = np.asarray(sorted(set(float(g) for g in grid)))
    if grid.size == 0:
        raise InvalidSpecError("lengthscale grid is empty")
    if int(S) < 1:
        raise InvalidSpecError(f"need S >= 1, got {S}")
    members = []
    for s in range(int(S)):
        rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(s, 1)))
        spec = KernelSpec(tuple(rng.choice(grid, size=int(d))), variance=variance)
        members.append(sample_frequencies(spec, J, d, derive_seed(seed, s)))
    return members


def save_frequencies(omega, path):
    """Write a frequency set as CSV: one header line, then ``J`` rows of ``d`` values."""
    src = omega.source
    header = (
        f"# rfssm-frequencies J={omega.J} d={omega.d} family={src.family} "
        f"variance={src.variance!r} seed={omega.seed} "
        f"lengthscales={';'.join(repr(v) for v in src.lengthscales)}"
    )
    with open(path, "w") as f:
        f.write(header + "\n")
        for row in omega.frequencies:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def load_frequencies(path):
    path = Path(path)
    with open(path) as f:
        header = f.readline().strip()
        if not header.startswith("# rfssm-frequencies"):
            raise SchemaError(f"{path}: missing frequency-set header")
        meta = dict(tok.split("=", 1) for tok in header.split()[2:])
        try:
            J, d = int(meta["J"]), int(meta["d"])
            spec = KernelSpec(
                tuple(float(v) for v in meta["lengthscales"].split(";")),
                variance=float(meta["variance"]),
                family=meta["family"],
            )
            seed = int(meta["seed"])
        except KeyError as exc:
            raise SchemaError(f"{path}: header lacks {exc}") from None
        rows = np.loadtxt(f, delimiter=",", ndmin=2)
    if rows.shape != (J, d):
        raise SchemaError(f"{path}: expected {J}x{d} frequencies, found {rows.shape}")
    return FrequencySet(rows, seed, spec)
