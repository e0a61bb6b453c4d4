"""Compiled inner loops for square-root information Bayesian linear regression.

Each stream stores the upper-triangular Cholesky factor ``R`` of its
posterior precision (``precision = R.T @ R``) in packed row-major form, plus
``w = R @ mean`` for each output dimension.  Absorbing a regressor ``phi``
with targets ``y`` is one sweep of Givens rotations over the stacked matrix

    [[R,     w],          [[R', w'],
     [phi.T, y]]   ->      [0,  e ]]

after which ``R'.T R' = R.T R + phi phi.T``, ``R'.T w' = R.T w + phi y`` and
``e**2`` is the increment of the inverse-Gamma scale ``b``.
"""

import math

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True)


@njit(**_JIT)
def row_offset(k, n):
    return k * (2 * n - k + 1) // 2


@njit(**_JIT)
def pack_upper(R):
    n = R.shape[0]
    out = np.empty(n * (n + 1) // 2)
    for k in range(n):
        o = row_offset(k, n)
        for i in range(k, n):
            out[o + i - k] = R[k, i]
    return out


@njit(**_JIT)
def unpack_upper(Rp, n):
    R = np.zeros((n, n))
    for k in range(n):
        o = row_offset(k, n)
        for i in range(k, n):
            R[k, i] = Rp[o + i - k]
    return R


@njit(**_JIT)
def forward_solve(Rp, n, rhs, out):
    """Solve ``R.T @ out = rhs`` with row-wise access to packed ``R``."""
    for i in range(n):
        out[i] = rhs[i]
    for k in range(n):
        o = row_offset(k, n)
        zk = out[k] / Rp[o]
        out[k] = zk
        for i in range(k + 1, n):
            out[i] -= Rp[o + i - k] * zk


@njit(**_JIT)
def back_solve(Rp, n, rhs, out):
    """Solve ``R @ out = rhs``."""
    for i in range(n - 1, -1, -1):
        o = row_offset(i, n)
        acc = rhs[i]
        for k in range(i + 1, n):
            acc -= Rp[o + k - i] * out[k]
        out[i] = acc / Rp[o]


@njit(**_JIT)
def rotate_in(Rp, n, v, w, y):
    """Givens sweep absorbing row ``[v.T, y]``; ``v`` and ``y`` are overwritten.

    ``w`` has shape (k, n).  On return ``y`` holds the residuals ``e``.
    Returns False when a pivot is not strictly positive and finite.
    """
    k_out = w.shape[0]
    for k in range(n):
        o = row_offset(k, n)
        rkk = Rp[o]
        vk = v[k]
        r = math.sqrt(rkk * rkk + vk * vk)
        if not (r > 0.0) or not math.isfinite(r):
            return False
        c = rkk / r
        s = vk / r
        Rp[o] = r
        for i in range(k + 1, n):
            rki = Rp[o + i - k]
            vi = v[i]
            Rp[o + i - k] = c * rki + s * vi
            v[i] = c * vi - s * rki
        for j in range(k_out):
            wj = w[j, k]
            yj = y[j]
            w[j, k] = c * wj + s * yj
            y[j] = c * yj - s * wj
    return True


@njit(**_JIT)
def bank_predict(Rp, w, phi, loc_out, q_out):
    """Predictive location and leverage ``q = phi.T cov phi`` for every stream.

    Rp: (B, n(n+1)/2); w: (B, k, n); phi: (B, n); loc_out: (B, k); q_out: (B,)
    """
    B, n = phi.shape
    k = w.shape[1]
    z = np.empty(n)
    for m in range(B):
        forward_solve(Rp[m], n, phi[m], z)
        q = 0.0
        for t in range(n):
            q += z[t] * z[t]
        q_out[m] = q
        for j in range(k):
            acc = 0.0
            for t in range(n):
                acc += z[t] * w[m, j, t]
            loc_out[m, j] = acc


@njit(**_JIT)
def _rotate_row(row, v, z, c, s, zk):
    # Contiguous views with a plain range index let LLVM vectorize this loop.
    for i in range(row.shape[0]):
        ri = row[i]
        vi = v[i]
        z[i] -= ri * zk
        row[i] = c * ri + s * vi
        v[i] = c * vi - s * ri


@njit(**_JIT)
def _rotate_row_into(src, dst, v, z, c, s, zk):
    # Same as _rotate_row but reading ``src`` and writing a distinct ``dst``.
    for i in range(src.shape[0]):
        ri = src[i]
        vi = v[i]
        z[i] -= ri * zk
        dst[i] = c * ri + s * vi
        v[i] = c * vi - s * ri


@njit(**_JIT)
def _finish_stream(w, z, loc_out, q_out, m):
    n = z.shape[0]
    q = 0.0
    for t in range(n):
        q += z[t] * z[t]
    q_out[m] = q
    for j in range(w.shape[1]):
        acc = 0.0
        for t in range(n):
            acc += z[t] * w[m, j, t]
        loc_out[m, j] = acc


@njit(**_JIT)
def _begin_stream(R, phi_m, rc, rs, v, z):
    """Rotate ``phi_m`` into ``R`` in place; fills ``z`` with ``R.T^-1 phi_m``."""
    n = phi_m.shape[0]
    for t in range(n):
        v[t] = phi_m[t]
        z[t] = phi_m[t]
    for kk in range(n):
        o = row_offset(kk, n)
        rkk = R[o]
        vk = v[kk]
        r = math.sqrt(rkk * rkk + vk * vk)
        if not (r > 0.0) or not math.isfinite(r):
            return False
        zk = z[kk] / rkk
        z[kk] = zk
        c = rkk / r
        s = vk / r
        rc[kk] = c
        rs[kk] = s
        R[o] = r
        _rotate_row(R[o + 1:o + n - kk], v[kk + 1:], z[kk + 1:], c, s, zk)
    return True


@njit(**_JIT)
def _begin_stream_into(Rs, R, phi_m, rc, rs, v, z):
    """As :func:`_begin_stream` but reading the factor from ``Rs``."""
    n = phi_m.shape[0]
    for t in range(n):
        v[t] = phi_m[t]
        z[t] = phi_m[t]
    for kk in range(n):
        o = row_offset(kk, n)
        rkk = Rs[o]
        vk = v[kk]
        r = math.sqrt(rkk * rkk + vk * vk)
        if not (r > 0.0) or not math.isfinite(r):
            return False
        zk = z[kk] / rkk
        z[kk] = zk
        c = rkk / r
        s = vk / r
        rc[kk] = c
        rs[kk] = s
        R[o] = r
        _rotate_row_into(Rs[o + 1:o + n - kk], R[o + 1:o + n - kk], v[kk + 1:], z[kk + 1:], c, s, zk)
    return True


@njit(**_JIT)
def bank_begin(Rp, w, b, phi, loc_out, q_out, rot_c, rot_s, ancestors):
    """First half of an update: predictive at ``phi`` plus the factor rotation.

    A single pass over each packed factor solves ``R.T z = phi`` with the old
    rows while rotating ``phi`` into them.  The Givens pairs are stored in
    ``rot_c``/``rot_s`` (B, n) for :func:`bank_finish`.

    ``ancestors`` carries a pending resampling step (see
    :func:`copy_streams`): stream ``m`` starts from the state of
    ``ancestors[m]``.  Copied streams are rotated first, reading their
    untouched sources, so the copy costs no extra pass over memory.
    Returns the first stream whose factor degenerated, or -1.
    """
    B, n = phi.shape
    v = np.empty(n)
    z = np.empty(n)
    for m in range(B):
        src = ancestors[m]
        if src != m:
            w[m, :, :] = w[src, :, :]
            b[m, :] = b[src, :]
            if not _begin_stream_into(Rp[src], Rp[m], phi[m], rot_c[m], rot_s[m], v, z):
                return m
            _finish_stream(w, z, loc_out, q_out, m)
    for m in range(B):
        if ancestors[m] == m:
            if not _begin_stream(Rp[m], phi[m], rot_c[m], rot_s[m], v, z):
                return m
            _finish_stream(w, z, loc_out, q_out, m)
    return -1


@njit(**_JIT)
def bank_finish(w, b, y, rot_c, rot_s, b_floor):
    """Second half of an update: rotate targets ``y`` into ``w`` and grow ``b``.

    Returns the number of times ``b`` was clamped at ``b_floor``.
    """
    B, k, n = w.shape
    n_floor = 0
    for m in range(B):
        for j in range(k):
            e = y[m, j]
            for kk in range(n):
                c = rot_c[m, kk]
                s = rot_s[m, kk]
                wj = w[m, j, kk]
                w[m, j, kk] = c * wj + s * e
                e = c * e - s * wj
            bn = b[m, j] + e * e
            if not (bn >= b_floor):
                bn = b_floor
                n_floor += 1
            b[m, j] = bn
    return n_floor


@njit(**_JIT)
def bank_means(Rp, w, out):
    """Posterior means ``R^-1 w`` for every stream and output dimension."""
    B, k, n = w.shape
    for m in range(B):
        for j in range(k):
            back_solve(Rp[m], n, w[m, j], out[m, j])


@njit(**_JIT)
def copy_streams(Rp, w, b, ancestors):
    """In-place ``X[m] = X[ancestors[m]]``; every source must satisfy ``ancestors[a] == a``."""
    for m in range(ancestors.shape[0]):
        src = ancestors[m]
        if src != m:
            Rp[m, :] = Rp[src, :]
            w[m, :, :] = w[src, :, :]
            b[m, :] = b[src, :]


@njit(**_JIT)
def cross_log_mean(x, loc, spread, dof, const, logw, out):
    """``out[m] = logsumexp_m' (logw[m'] + sum_d log t(x[m', d]; loc[m, d], spread[m, d]))``.

    ``const`` is the per-dimension log normalizer of the standard density
    (without the ``-log spread`` term); ``dof <= 0`` selects a normal.
    Each row is summed in one pass shifted by an upper bound of its terms
    and falls back to an exact max shift if that pass underflows.
    """
    M, d = x.shape
    gauss = dof <= 0.0
    half = 0.5 if gauss else 0.5 * (dof + 1.0)
    inv_nu = 0.0 if gauss else 1.0 / dof
    inv = np.empty(d)
    wmax = -np.inf
    for mp in range(M):
        if logw[mp] > wmax:
            wmax = logw[mp]
    vals = np.empty(M)
    for m in range(M):
        base = 0.0
        for j in range(d):
            inv[j] = 1.0 / spread[m, j]
            base += const + math.log(inv[j])
        s = 0.0
        for mp in range(M):
            if gauss:
                acc = 0.0
                for j in range(d):
                    z = (x[mp, j] - loc[m, j]) * inv[j]
                    acc += z * z
                e = logw[mp] - wmax - half * acc
            else:
                prod = 1.0
                for j in range(d):
                    z = (x[mp, j] - loc[m, j]) * inv[j]
                    prod *= 1.0 + z * z * inv_nu
                e = logw[mp] - wmax - half * math.log(prod)
            vals[mp] = e
            s += math.exp(e)
        if s > 1e-250:
            out[m] = wmax + base + math.log(s)
            continue
        top = -np.inf
        for mp in range(M):
            if vals[mp] > top:
                top = vals[mp]
        if top == -np.inf:
            out[m] = -np.inf
            continue
        s = 0.0
        for mp in range(M):
            s += math.exp(vals[mp] - top)
        out[m] = wmax + base + top + math.log(s)
