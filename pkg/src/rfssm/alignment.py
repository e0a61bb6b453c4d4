"""Standardization, alignment and fusion of latent trajectories.

Latent states recovered by a GP state-space filter are identifiable only up
to scale, shift and rotation.  Each member's trajectory is therefore
reduced to the left singular vectors of its centered matrix, rotated (and
possibly mirrored) onto a shared guidance point, and then averaged.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateTrajectoryError, SchemaError

__all__ = [
    "svd_standardize",
    "plane_rotation",
    "align_to_guidance",
    "fuse",
    "procrustes_to_truth",
    "save_trajectory",
    "load_trajectory",
]

RANK_TOL = 1e-12


def _check(X, name="trajectory"):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"{name} must be a T x d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DegenerateTrajectoryError(f"{name} has non-finite entries")
    return X


def svd_standardize(X):
    """Left singular vectors of the column-centered ``X``.

    Columns are ordered by descending singular value and their signs are
    fixed so that the largest-magnitude entry of each column is positive.

    Raises
    ------
    DegenerateTrajectoryError
        If ``T <= d`` or the smallest singular value is below
        ``1e-12`` times the largest.
    """
    X = _check(X)
    T, d = X.shape
    if T <= d:
        raise DegenerateTrajectoryError(f"need more time steps than dimensions, got {T} x {d}")
    U, s, _ = np.linalg.svd(X - X.mean(axis=0), full_matrices=False)
    if not s[0] > 0 or s[-1] < RANK_TOL * s[0]:
        raise DegenerateTrajectoryError(f"trajectory is rank deficient (singular values {s})")
    rows = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[rows, np.arange(d)])
    signs[signs == 0] = 1.0
    return U * signs


def _complement(u):
    """A unit vector orthogonal to unit ``u`` (deterministic)."""
    e = np.zeros_like(u)
    e[np.argmin(np.abs(u))] = 1.0
    v = e - (e @ u) * u
    return v / np.linalg.norm(v)


def plane_rotation(a, b):
    """Minimal-angle rotation ``Q`` (``Q @ a`` parallel to ``b``) acting in span(a, b).

    Vectors orthogonal to both are left unchanged.  For antiparallel inputs
    the rotation is by pi in the plane of ``a`` and a fixed orthogonal
    direction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateTrajectoryError("cannot rotate a zero vector")
    u, g = a / na, b / nb
    d = u.size
    c = float(np.clip(u @ g, -1.0, 1.0))
    w = g - c * u
    nw = np.linalg.norm(w)
    if nw < 1e-12:
        if c > 0:
            return np.eye(d)
        if d == 1:
            return -np.eye(1)
        w, s, c = _complement(u), 0.0, -1.0
    else:
        w = w / nw
        s = float(np.sqrt(max(0.0, 1.0 - c * c)))
    # Rotation in the (u, w) plane by the angle with cosine c and sine s.
    return (np.eye(d) + (c - 1.0) * (np.outer(u, u) + np.outer(w, w))
            + s * (np.outer(w, u) - np.outer(u, w)))


def align_to_guidance(members, guidance, t_star, reference=None):
    """Rotate every member so that its row ``t_star`` overlaps ``guidance``.

    Two orthogonal transforms are candidates for each member: the minimal
    plane rotation ``A`` that maps the member's row onto the guidance
    direction, and ``A`` composed with the reflection that fixes the row
    and mirrors its orthogonal complement.  Both satisfy the guidance
    constraint; when ``reference`` (a full trajectory in the guidance
    frame) is given, the one with larger overlap with it is kept.

    Returns the list of aligned trajectories.
    """
    g = np.asarray(guidance, dtype=float).ravel()
    if not np.linalg.norm(g) > 0:
        raise DegenerateTrajectoryError("guidance point has zero norm")
    out = []
    for X in members:
        X = _check(X)
        if X.shape[1] != g.size:
            raise ValueError(f"member has {X.shape[1]} dims, guidance has {g.size}")
        u = X[t_star]
        A = plane_rotation(u, g)
        best = X @ A.T
        if reference is not None and X.shape[1] > 1:
            uh = u / np.linalg.norm(u)
            mirror = 2.0 * np.outer(uh, uh) - np.eye(u.size)
            alt = X @ (A @ mirror).T
            if np.sum(alt * reference) > np.sum(best * reference):
                best = alt
        out.append(best)
    return out


def fuse(trajectories, weights):
    """Per-entry weighted average of aligned trajectories."""
    arr = np.asarray([_check(X) for X in trajectories])
    w = np.asarray(weights, dtype=float)
    if w.shape != (arr.shape[0],):
        raise ValueError(f"{arr.shape[0]} trajectories but {w.size} weights")
    return np.tensordot(w, arr, axes=1)


def procrustes_to_truth(estimate, truth):
    """Least-squares similarity transform (rotation/reflection, scale, shift) of ``estimate`` onto ``truth``.

    Returns ``(aligned, rmse)`` where the RMSE is taken per dimension and
    averaged.
    """
    E = _check(estimate, "estimate")
    Y = _check(truth, "truth")
    if E.shape != Y.shape:
        raise ValueError(f"estimate {E.shape} and truth {Y.shape} differ in shape")
    mu_e, mu_y = E.mean(axis=0), Y.mean(axis=0)
    Ec, Yc = E - mu_e, Y - mu_y
    if not np.linalg.norm(Yc) > 0:
        raise DegenerateTrajectoryError("truth has no variation")
    ne = np.sum(Ec * Ec)
    if ne == 0:
        aligned = np.broadcast_to(mu_y, Y.shape).copy()
    else:
        U, s, Vt = np.linalg.svd(Ec.T @ Yc)
        Q = U @ Vt
        scale = s.sum() / ne
        aligned = scale * Ec @ Q + mu_y
    rmse = float(np.mean(np.sqrt(np.mean((aligned - Y) ** 2, axis=0))))
    return aligned, rmse


def save_trajectory(X, path, t0=0):
    """CSV with header ``t,x1,...,xd`` and one row per time index."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    header = ",".join(["t"] + [f"x{i + 1}" for i in range(X.shape[1])])
    t = np.arange(t0, t0 + X.shape[0])[:, None]
    np.savetxt(path, np.hstack([t, X]), delimiter=",", header=header, comments="",
               fmt=["%d"] + ["%.17g"] * X.shape[1])


def load_trajectory(path):
    """Read a trajectory CSV; returns ``(t, X)``."""
    with open(path) as f:
        header = f.readline().strip().split(",")
    if not header or header[0] != "t" or any(h != f"x{i + 1}" for i, h in enumerate(header[1:])):
        raise SchemaError(f"{path}: expected header t,x1..xd, got {','.join(header)}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    return data[:, 0].astype(int), data[:, 1:]
