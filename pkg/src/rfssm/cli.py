"""Command-line interface: ``rfssm simulate | filter | ensemble | align | eval``.

Every option can also come from a JSON config file (``--config``); options
given on the command line override config keys, which override defaults.
Config keys use the long option names with dashes replaced by underscores.

Exit codes: 0 success, 2 usage error, 3 invalid configuration, 4 I/O or
schema error, 5 numerical degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import alignment, metrics_io, pipeline, synthetic
from .errors import ConfigError, InvalidSpecError, NumericalDegeneracyError, SchemaError
from .ensemble import Ensemble, resolve_threads
from .gpdssm import STREAM_WEIGHT_MODES, DeepConfig, DeepMember
from .gpssm import LIKELIHOODS, FilterConfig, GpssmMember
from .pf_core import RESAMPLE_MODES
from .spectral_features import PAPER_GRID, KernelSpec

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4, 5

DEFAULTS = {
    "gen": "A", "T": 2000, "seed": 0, "var_u": None, "var_v": None, "prefix": None,
    "model": "ssm", "dims": [2], "J": 50, "J_y": None, "M": 500, "S": 100, "T0": None,
    "lengthscale": [1.0], "variance": 1.0, "a0": None, "a0_y": None, "b0": 1.0,
    "resample": "always", "stream_weight_mode": "average", "shared_params": False,
    "likelihood": "student_t", "gaussian_variance": 0.1, "dict_grid": list(PAPER_GRID),
    "threads": None, "obs": None, "obs_columns": None, "truth": None, "truth_columns": None,
    "normalize": True, "checkpoint": None, "resume": None, "compare_gaussian": False,
    "inputs": None, "weights": None, "t_star": 0, "estimate": None, "procrustes": False,
    "start": 0, "no_timing": False, "out_dir": ".",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out-dir", help="directory for all outputs (default: current)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--no-timing", action="store_true", default=None,
                   help="write runtime as null so reports are byte-identical across runs")


def _add_model(p):
    p.add_argument("--obs", help="observation CSV (header row; numeric columns)")
    p.add_argument("--obs-columns", type=lambda s: s.split(","), help="comma-separated observation columns")
    p.add_argument("--truth", help="latent truth CSV (t,x1..xd) for latent RMSE")
    p.add_argument("--truth-columns", type=lambda s: s.split(","), help="truth columns inside --obs")
    p.add_argument("--model", choices=("ssm", "dssm"))
    p.add_argument("--dims", type=_ints, help="latent dims, one per layer (e.g. '2,3')")
    p.add_argument("--J", type=_ints, help="features per transition map (one value or one per layer)")
    p.add_argument("--J-y", type=int, help="features of the observation map (default: first J)")
    p.add_argument("--M", type=int, help="particle streams per filter")
    p.add_argument("--T0", type=int, help="burn-in / train-test split (default T/2)")
    p.add_argument("--lengthscale", type=_floats, help="RBF lengthscale(s) for a single filter")
    p.add_argument("--variance", type=float, help="prior weight variance")
    p.add_argument("--a0", type=float, help="prior shape of the transition posteriors")
    p.add_argument("--a0-y", type=float, help="prior shape of the observation posteriors")
    p.add_argument("--b0", type=float, help="prior scale")
    p.add_argument("--resample", choices=RESAMPLE_MODES)
    p.add_argument("--stream-weight-mode", choices=STREAM_WEIGHT_MODES)
    p.add_argument("--shared-params", action="store_true", default=None)
    p.add_argument("--likelihood", choices=LIKELIHOODS)
    p.add_argument("--gaussian-variance", type=float)
    p.add_argument("--no-normalize", dest="normalize", action="store_false", default=None,
                   help="feed raw observations (default: z-score with training statistics)")


def build_parser():
    parser = _Parser(prog="rfssm", description="Sequential random-feature GP state-space filtering.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic benchmark")
    _add_common(p)
    p.add_argument("--gen", choices=sorted(synthetic.GENERATORS))
    p.add_argument("--T", type=int)
    p.add_argument("--var-u", type=float)
    p.add_argument("--var-v", type=float)
    p.add_argument("--prefix")

    p = sub.add_parser("filter", help="run a single filter")
    _add_common(p)
    _add_model(p)
    p.add_argument("--checkpoint", help="write a checkpoint (.npz) after the run")
    p.add_argument("--resume", help="continue from a checkpoint (.npz)")

    p = sub.add_parser("ensemble", help="run an ensemble over a kernel dictionary")
    _add_common(p)
    _add_model(p)
    p.add_argument("--members", "--S", dest="S", type=int, help="ensemble size")
    p.add_argument("--dict-grid", type=_floats, help="lengthscale grid (default 1e-4 ... 1e4)")
    p.add_argument("--threads", type=int, help="worker threads (RFSSM_THREADS overrides)")
    p.add_argument("--compare-gaussian", action="store_true", default=None,
                   help="also run the fixed-variance Gaussian ablation and emit both curves")

    p = sub.add_parser("align", help="standardize, align and fuse trajectory CSVs")
    _add_common(p)
    p.add_argument("--inputs", nargs="+", help="member trajectory CSVs")
    p.add_argument("--weights", type=_floats, help="member weights (default uniform)")
    p.add_argument("--t-star", type=int, help="guidance row index (default 0)")

    p = sub.add_parser("eval", help="score an estimate trajectory against truth")
    _add_common(p)
    p.add_argument("--estimate", help="estimate CSV (t,x1..xd)")
    p.add_argument("--truth", help="truth CSV (t,x1..xd)")
    p.add_argument("--start", type=int, help="first row scored")
    p.add_argument("--procrustes", action="store_true", default=None,
                   help="standardize and similarity-align the estimate before scoring")
    return parser


def resolve(args):
    """Merge defaults, the JSON config and explicit flags."""
    opts = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from None
        if not isinstance(cfg, dict):
            raise ConfigError(f"{args.config}: top level must be an object")
        unknown = sorted(set(cfg) - set(DEFAULTS) - {"members"})
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {unknown}")
        if "members" in cfg:
            cfg["S"] = cfg.pop("members")
        opts.update(cfg)
    for k, v in vars(args).items():
        if k not in ("command", "config") and v is not None:
            opts[k] = v
    for key in ("dims", "J", "lengthscale", "dict_grid"):
        if opts.get(key) is not None and not isinstance(opts[key], list):
            opts[key] = [opts[key]]
    return opts


# -- model construction ------------------------------------------------------


def _member_config(o, d_y):
    dims = [int(d) for d in o["dims"]]
    J = [int(j) for j in o["J"]]
    J_y = int(o["J_y"] or J[0])
    kernel = KernelSpec(tuple(o["lengthscale"]), float(o["variance"]))
    if o["model"] == "ssm":
        if len(dims) != 1:
            raise ConfigError(f"model 'ssm' takes one latent dim, got {dims}")
        return FilterConfig(
            d_x=dims[0], d_y=d_y, M=int(o["M"]), J_x=J[0], J_y=J_y, kernel_x=kernel, kernel_y=kernel,
            a0_x=o["a0"], a0_y=o["a0_y"], b0=float(o["b0"]), resample=o["resample"],
            shared_params=bool(o["shared_params"]), likelihood=o["likelihood"],
            gaussian_variance=float(o["gaussian_variance"]))
    if o["model"] != "dssm":
        raise ConfigError(f"unknown model kind {o['model']!r}")
    if o["shared_params"]:
        raise ConfigError("shared_params is only available for model 'ssm'")
    return DeepConfig(
        tuple(dims), d_y, M=int(o["M"]), J=J if len(J) > 1 else J[0], J_y=J_y, kernels=kernel,
        kernel_y=kernel, a0=o["a0"], a0_y=o["a0_y"], b0=float(o["b0"]), resample=o["resample"],
        stream_weight_mode=o["stream_weight_mode"], likelihood=o["likelihood"],
        gaussian_variance=float(o["gaussian_variance"]))


def _load_data(o):
    if not o["obs"]:
        raise ConfigError("--obs is required")
    out = Path(o["out_dir"])
    path = Path(o["obs"])
    if not path.is_absolute() and not path.exists():
        path = out / path
    ds = metrics_io.load_csv(path, obs_columns=o["obs_columns"], truth_columns=o["truth_columns"])
    T0 = ds.T // 2 if o["T0"] is None else int(o["T0"])
    if not 0 <= T0 < ds.T:
        raise ConfigError(f"T0={T0} must lie in [0, {ds.T})")
    ds.split = T0
    if o["truth"]:
        tp = Path(o["truth"])
        if not tp.is_absolute() and not tp.exists():
            tp = out / tp
        _, truth = alignment.load_trajectory(tp)
        if truth.shape[0] != ds.T:
            raise SchemaError(f"{tp}: {truth.shape[0]} rows but {ds.T} observations")
        ds.truth = truth
    if o["normalize"]:
        stats = (0, T0) if T0 >= 2 else (0, ds.T)
        ds = metrics_io.normalize(ds, stats)
        ds.split = T0
    return ds, T0


def _report(o, ds, T0, result, latent=None, extra=None):
    Y = ds.observations
    metrics = {
        "rmse": result.one_step_rmse(Y, T0),
        "mnll": result.mnll(T0),
        "runtime": None if o["no_timing"] else result.runtime,
        "T": int(ds.T), "T0": int(T0), "seed": int(o["seed"]),
    }
    trajectories = {}
    if latent is not None:
        est, scores = latent
        trajectories["latent_estimate"] = (est, T0 + 1)
        if scores is not None:
            metrics["latent_rmse"], metrics["latent_corr"] = scores[0], list(scores[1])
    metrics.update(extra or {})
    trajectories["predictions"] = (result.mean, 1)
    plot = {"truth": Y[T0:], "estimate": result.mean[T0:], "lower": result.lower[T0:],
            "upper": result.upper[T0:], "t0": T0 + 1}
    out = Path(o["out_dir"])
    metrics_io.emit_report({"metrics": metrics, "trajectories": trajectories, "plot": plot}, out)
    return metrics


def _latent(o, ds, T0, estimates):
    if estimates is None or len(estimates) == 0:
        return None
    est = estimates[T0:]
    if ds.truth is None:
        return est, None
    truth = ds.truth[T0:, : est.shape[1]] if ds.truth.shape[1] >= est.shape[1] else ds.truth[T0:]
    if truth.shape != est.shape:
        return est, None
    aligned, err, corr = pipeline.latent_scores(est, truth)
    return aligned, (err, corr)


# -- subcommands -------------------------------------------------------------


def cmd_simulate(o):
    kw = {}
    if o["var_u"] is not None:
        kw["var_u"] = o["var_u"]
    if o["var_v"] is not None:
        kw["var_v"] = o["var_v"]
    run = synthetic.generate(o["gen"], int(o["T"]), int(o["seed"]), **kw)
    paths = run.save(o["out_dir"], o["prefix"])
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_filter(o):
    ds, T0 = _load_data(o)
    if o["resume"]:
        path = Path(o["resume"])
        meta = json.loads(str(np.load(path, allow_pickle=False)["meta"]))
        member = (GpssmMember if meta["kind"] == "gpssm" else DeepMember).load(path)
        start = member.t
        if member.config.d_y != ds.d_y:
            raise ConfigError(f"checkpoint expects d_y={member.config.d_y}, data has {ds.d_y}")
    else:
        cfg = _member_config(o, ds.d_y)
        member = (GpssmMember if isinstance(cfg, FilterConfig) else DeepMember).init(cfg, int(o["seed"]))
        start = 0
    Y = ds.observations
    sub = pipeline.run_sequence(member, Y[start:], interval_from=max(T0 - start, 0))
    result = _pad(sub, start, ds)
    if o["checkpoint"]:
        ck = Path(o["checkpoint"])
        member.save(ck if ck.is_absolute() else Path(o["out_dir"]) / ck)
    est = member.estimates() if isinstance(member, GpssmMember) else member.estimates(0)
    metrics = _report(o, ds, T0, result, _latent(o, ds, T0, est if len(est) == ds.T else None))
    print(json.dumps({k: metrics[k] for k in ("rmse", "mnll")}))
    return EXIT_OK


def _pad(sub, start, ds):
    if start == 0:
        return sub
    T, k = ds.observations.shape
    full = lambda a: np.vstack([np.full((start, k), np.nan), a]) if a is not None else None
    sub.mean, sub.log_density = full(sub.mean), full(sub.log_density)
    sub.lower, sub.upper = full(sub.lower), full(sub.upper)
    return sub


def _run_ensemble(o, ds, T0, likelihood):
    o = dict(o, likelihood=likelihood)
    cfg = _member_config(o, ds.d_y)
    ens = Ensemble.from_dictionary(cfg, int(o["S"]), int(o["seed"]), T0, o["dict_grid"],
                                   threads=resolve_threads(o["threads"]))
    try:
        result = pipeline.run_sequence(ens, ds.observations, interval_from=T0)
    finally:
        ens.close()
    try:
        est = ens.fused_trajectory(start=T0)
    except NumericalDegeneracyError:
        est = None
    return ens, result, est


def _curves(result, Y, T0):
    """Running one-step RMSE and MNLL from ``T0`` on."""
    err = np.mean((result.mean[T0:] - Y[T0:]) ** 2, axis=1)
    n = np.arange(1, err.size + 1)
    rmse = np.sqrt(np.cumsum(err) / n)
    mnll = np.cumsum(-np.mean(result.log_density[T0:], axis=1)) / n
    return rmse, mnll


def cmd_ensemble(o):
    ds, T0 = _load_data(o)
    ens, result, est = _run_ensemble(o, ds, T0, o["likelihood"])
    latent = None
    if est is not None:
        if ds.truth is not None and ds.truth.shape[1] == est.shape[1]:
            aligned, err, corr = pipeline.latent_scores(est, ds.truth[T0:])
            latent = (aligned, (err, corr))
        else:
            latent = (est, None)
    extra = {"S": ens.S, "keep_and_drop_events": ens.n_resamples,
             "final_weights": ens.weights.tolist()}
    if o["compare_gaussian"]:
        other = "gaussian" if o["likelihood"] == "student_t" else "student_t"
        _, res_g, _ = _run_ensemble(o, ds, T0, other)
        r1, m1 = _curves(result, ds.observations, T0)
        r2, m2 = _curves(res_g, ds.observations, T0)
        t1 = np.linspace(0, result.runtime, r1.size + 1)[1:]
        t2 = np.linspace(0, res_g.runtime, r2.size + 1)[1:]
        names = [o["likelihood"], other]
        cols = [f"{a}_{n}" for n in names for a in ("elapsed", "rmse", "mnll")]
        metrics_io.save_csv(Path(o["out_dir"]) / "comparison_curves.csv", cols,
                            np.column_stack([t1, r1, m1, t2, r2, m2]), t0=T0 + 1)
        extra["comparison"] = {
            names[0]: {"rmse": float(r1[-1]), "mnll": float(m1[-1]), "runtime": result.runtime},
            names[1]: {"rmse": float(r2[-1]), "mnll": float(m2[-1]), "runtime": res_g.runtime},
        }
        if o["no_timing"]:
            for v in extra["comparison"].values():
                v["runtime"] = None
    metrics = _report(o, ds, T0, result, latent, extra)
    print(json.dumps({k: metrics[k] for k in ("rmse", "mnll")}))
    return EXIT_OK


def cmd_align(o):
    if not o["inputs"]:
        raise ConfigError("--inputs is required")
    trajs = [alignment.svd_standardize(alignment.load_trajectory(p)[1]) for p in o["inputs"]]
    w = np.full(len(trajs), 1.0 / len(trajs)) if not o["weights"] else np.asarray(o["weights"], float)
    if w.size != len(trajs):
        raise ConfigError(f"{len(trajs)} inputs but {w.size} weights")
    w = w / w.sum()
    lead = int(np.argmax(w))
    t_star = int(o["t_star"])
    aligned = alignment.align_to_guidance(trajs, trajs[lead][t_star], t_star, reference=trajs[lead])
    fused = alignment.fuse(aligned, w)
    out = Path(o["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    alignment.save_trajectory(fused, out / "fused.csv")
    for i, X in enumerate(aligned):
        alignment.save_trajectory(X, out / f"aligned_{i:03d}.csv")
    print(out / "fused.csv")
    return EXIT_OK


def cmd_eval(o):
    if not (o["estimate"] and o["truth"]):
        raise ConfigError("--estimate and --truth are required")
    _, E = alignment.load_trajectory(o["estimate"])
    _, Y = alignment.load_trajectory(o["truth"])
    start = int(o["start"])
    E, Y = E[start:], Y[start:]
    metrics = {"mnll": None, "runtime": None}
    if o["procrustes"]:
        aligned, err, corr = pipeline.latent_scores(E, Y)
        metrics.update(rmse=err, correlation=list(corr))
    else:
        metrics["rmse"] = metrics_io.rmse(E, Y)
    metrics_io.emit_report({"metrics": metrics}, o["out_dir"])
    print(json.dumps({"rmse": metrics["rmse"]}))
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "ensemble": cmd_ensemble,
            "align": cmd_align, "eval": cmd_eval}


def run(argv=None):
    """Parse ``argv`` and run the chosen command; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        opts = resolve(args)
        Path(opts["out_dir"]).mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](opts)
    except (SchemaError, OSError) as exc:
        print(f"rfssm: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except InvalidSpecError as exc:
        print(f"rfssm: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDegeneracyError as exc:
        print(f"rfssm: numerical degeneracy: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
