"""Dataset ingestion, normalization, scoring and report files."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .conjugate_blr import StudentTParams, t_log_density
from .errors import InvalidSpecError, SchemaError

__all__ = [
    "SeriesDataset",
    "load_csv",
    "save_csv",
    "save_observations",
    "normalize",
    "rmse",
    "pearson",
    "mnll",
    "coverage",
    "emit_report",
    "METRICS_SCHEMA",
]

METRICS_SCHEMA = 1


@dataclass
class SeriesDataset:
    """Observations with optional truth and normalization statistics.

    ``split`` is the first index of the evaluation part; statistics default
    to the training range ``[0, split)``.
    """

    observations: np.ndarray
    truth: np.ndarray | None = None
    columns: tuple = ()
    split: int | None = None
    mean: np.ndarray | None = None
    std: np.ndarray | None = None
    time: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.atleast_2d(np.asarray(self.observations, dtype=float))
        if self.observations.shape[0] == 1 and self.observations.shape[1] > 1 and not self.columns:
            self.observations = self.observations.T
        if self.split is None:
            self.split = self.T
        if not 0 <= int(self.split) <= self.T:
            raise InvalidSpecError(f"split {self.split} outside [0, {self.T}]")

    @property
    def T(self):
        return self.observations.shape[0]

    @property
    def d_y(self):
        return self.observations.shape[1]

    @property
    def normalized(self):
        return self.mean is not None

    def transform(self, Y):
        return (np.asarray(Y, dtype=float) - self.mean) / self.std

    def inverse_transform(self, Z):
        return np.asarray(Z, dtype=float) * self.std + self.mean


def _parse_rows(path, reader, start_line):
    rows = []
    for lineno, row in enumerate(reader, start=start_line):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: non-numeric value in {row}") from None
        if any(math.isnan(v) for v in vals):
            raise SchemaError(f"{path}:{lineno}: NaN values are not accepted")
        rows.append(vals)
    return rows


def load_csv(path, columns=None, obs_columns=None, truth_columns=None, split=None):
    """Read a numeric CSV with a header row.

    Parameters
    ----------
    columns : sequence of str, optional
        Expected header; a mismatch raises :class:`SchemaError`.
    obs_columns, truth_columns : sequence of str, optional
        Columns holding observations and latent truth.  By default every
        column except ``t`` is an observation.
    split : int, optional
        Train/test split index.
    """
    path = Path(path)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: file is empty") from None
        if columns is not None and list(columns) != header:
            raise SchemaError(f"{path}: header {header} does not match expected {list(columns)}")
        rows = _parse_rows(path, reader, 2)
    width = len(header)
    for i, r in enumerate(rows):
        if len(r) != width:
            raise SchemaError(f"{path}: row {i + 1} has {len(r)} fields, header has {width}")
    data = np.array(rows, dtype=float).reshape(-1, width)
    index = {h: i for i, h in enumerate(header)}

    def pick(names):
        missing = [n for n in names if n not in index]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        return data[:, [index[n] for n in names]]

    if obs_columns is None:
        obs_columns = [h for h in header if h != "t"]
    obs = pick(obs_columns)
    truth = pick(truth_columns) if truth_columns else None
    time = data[:, index["t"]] if "t" in index else None
    return SeriesDataset(obs, truth, tuple(obs_columns), split, time=time)


def save_csv(path, header, data, time=None, t0=0):
    """Write ``data`` (T, k) with a header and an optional leading ``t`` column."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 1 and len(header) != data.shape[1]:
        data = data.T
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        cols = list(header)
        if time is not False:
            cols = ["t"] + cols
        w.writerow(cols)
        ts = np.arange(t0, t0 + data.shape[0]) if time in (None, True) else time
        for i, row in enumerate(data):
            vals = [repr(float(v)) for v in row]
            w.writerow(vals if time is False else [int(ts[i])] + vals)


def save_observations(Y, path, t0=0):
    """Observation CSV with header ``t,y1..yk``."""
    Y = np.asarray(Y, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    save_csv(path, [f"y{i + 1}" for i in range(Y.shape[1])], Y, t0=t0)


def normalize(ds, stat_range=None):
    """Z-score every column with statistics from ``stat_range`` (default ``[0, split)``).

    The truth, if present, is normalized with its own statistics over the
    same range.  Raises :class:`InvalidSpecError` for constant columns.
    """
    lo, hi = (0, ds.split) if stat_range is None else stat_range
    if hi - lo < 2:
        raise InvalidSpecError(f"statistics range [{lo}, {hi}) has fewer than two rows")
    seg = ds.observations[lo:hi]
    mean, std = seg.mean(axis=0), seg.std(axis=0)
    if np.any(std <= 1e-12 * np.maximum(1.0, np.abs(mean))):
        bad = [ds.columns[i] if ds.columns else i for i in np.flatnonzero(std <= 1e-12 * np.maximum(1.0, np.abs(mean)))]
        raise InvalidSpecError(f"zero-variance column(s) {bad} in the statistics range")
    out = replace(ds, observations=(ds.observations - mean) / std, mean=mean, std=std)
    if ds.truth is not None:
        tseg = ds.truth[lo:hi]
        ts = tseg.std(axis=0)
        ts[ts == 0] = 1.0
        out.truth = (ds.truth - tseg.mean(axis=0)) / ts
    return out


def _range(n, rng):
    if rng is None:
        return slice(0, n)
    if isinstance(rng, slice):
        return rng
    return slice(*rng)


def rmse(estimate, truth, range=None):
    """Root mean squared error over ``range``, computed per dimension and averaged."""
    E = np.asarray(estimate, dtype=float)
    Y = np.asarray(truth, dtype=float)
    if E.shape != Y.shape:
        raise ValueError(f"estimate {E.shape} and truth {Y.shape} differ in shape")
    if E.ndim == 1:
        E, Y = E[:, None], Y[:, None]
    sl = _range(E.shape[0], range)
    return float(np.mean(np.sqrt(np.mean((E[sl] - Y[sl]) ** 2, axis=0))))


def pearson(estimate, truth):
    """Per-dimension Pearson correlation."""
    E = np.atleast_2d(np.asarray(estimate, dtype=float).T).T
    Y = np.atleast_2d(np.asarray(truth, dtype=float).T).T
    Ec, Yc = E - E.mean(0), Y - Y.mean(0)
    return np.sum(Ec * Yc, 0) / np.sqrt(np.sum(Ec**2, 0) * np.sum(Yc**2, 0))


def _log_density(pred, y, dim):
    if isinstance(pred, StudentTParams):
        p = StudentTParams(np.ravel(pred.dof)[dim % np.size(pred.dof)],
                           np.ravel(pred.loc)[dim], np.ravel(pred.scale)[dim])
        return float(t_log_density(y, p))
    return pred.marginal_log_density(y, dim)


def mnll(predictives, observations, range=None):
    """Mean negative log-likelihood of observations under per-step predictives.

    ``predictives[t]`` is a :class:`StudentTParams` (vectorized over
    dimensions) or any object with ``marginal_log_density(y, dim)`` such as
    :class:`rfssm.conjugate_blr.TMixture`.  The mean runs over steps in
    ``range`` and over dimensions.
    """
    Y = np.asarray(observations, dtype=float)
    Y = Y[:, None] if Y.ndim == 1 else Y
    sl = _range(Y.shape[0], range)
    idx = np.arange(Y.shape[0])[sl]
    if len(predictives) < Y.shape[0]:
        raise ValueError(f"{len(predictives)} predictives for {Y.shape[0]} observations")
    total, count = 0.0, 0
    for t in idx:
        if predictives[t] is None:
            raise ValueError(f"missing predictive at step {t}")
        for d in np.arange(Y.shape[1]):
            total -= _log_density(predictives[t], Y[t, d], d)
            count += 1
    return total / count


def coverage(lower, upper, values):
    """Fraction of ``values`` inside ``[lower, upper]``."""
    v = np.asarray(values, dtype=float)
    return float(np.mean((v >= np.asarray(lower)) & (v <= np.asarray(upper))))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def emit_report(results, out_dir):
    """Write the metrics JSON, trajectory CSVs and the plot-ready CSV.

    ``results`` keys:

    ``metrics``
        dict that must contain ``rmse``, ``mnll`` and ``runtime``; written
        to ``metrics.json`` with ``"schema": 1``.
    ``trajectories``
        optional ``{name: (T, d) array or (array, first_t)}``, each written
        to ``<name>.csv``; ``results["t0"]`` is the default first time index.
    ``plot``
        optional dict with ``truth``, ``estimate``, ``lower``, ``upper``
        arrays (T, k) and ``t0``; written to ``plot.csv``.

    Returns the list of written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = dict(results.get("metrics", {}))
    missing = [k for k in ("rmse", "mnll", "runtime") if k not in metrics]
    if missing:
        raise ValueError(f"metrics lack required keys {missing}")
    metrics["schema"] = METRICS_SCHEMA
    paths = []
    p = out / "metrics.json"
    p.write_text(json.dumps(_jsonable(metrics), indent=2, sort_keys=True) + "\n")
    paths.append(p)
    for name, X in results.get("trajectories", {}).items():
        from .alignment import save_trajectory

        t0 = results.get("t0", 0)
        if isinstance(X, tuple):
            X, t0 = X
        p = out / f"{name}.csv"
        save_trajectory(np.atleast_2d(np.asarray(X).T).T, p, t0=t0)
        paths.append(p)
    plot = results.get("plot")
    if plot:
        est = np.asarray(plot["estimate"], dtype=float)
        est = est[:, None] if est.ndim == 1 else est
        k = est.shape[1]
        cols, blocks = [], []
        for key in ("truth", "estimate", "lower", "upper"):
            if plot.get(key) is None:
                continue
            arr = np.asarray(plot[key], dtype=float).reshape(est.shape[0], k)
            cols += [f"{key}{i + 1}" for i in range(k)]
            blocks.append(arr)
        p = out / "plot.csv"
        save_csv(p, cols, np.hstack(blocks), t0=plot.get("t0", 0))
        paths.append(p)
    return paths
