"""Acceptance checks, one test per criterion.

Each test records a one-line verdict that is printed in the terminal
summary.  The long reproduction runs (criteria 5 and 7) are marked ``slow``.
"""

import json
import os
import time

import numpy as np
import pytest
from scipy import integrate, linalg
from scipy.stats import t as student_t

from rfssm import alignment, cli, metrics_io, pf_core
from rfssm.conjugate_blr import NIGState, StudentTParams, nig_update, predictive_params, t_log_density
from rfssm.ensemble import Ensemble
from rfssm.gpdssm import DeepConfig, DeepMember
from rfssm.gpssm import FilterConfig, GpssmMember
from rfssm.pipeline import latent_scores
from rfssm.spectral_features import KernelSpec, feature_matrix, sample_frequencies
from rfssm.synthetic import gen_A, gen_D

SEEDS = (1, 2, 3, 4, 5)
# Lengthscale dictionary for the desk-scale gen_A ensemble (see the README).
GEN_A_GRID = (0.3, 1.0, 3.0)


def random_orthogonal(rng, d):
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.diag(R))


# -- 1. conjugacy ----------------------------------------------------------


def test_criterion_01_conjugacy_oracle(record):
    rng = np.random.default_rng(11)
    n, N = 12, 50
    Phi = rng.standard_normal((N, n)) / np.sqrt(n)
    y = Phi @ rng.standard_normal(n) + 0.3 * rng.standard_normal(N)
    prior = NIGState.prior(n, a0=n + 2, b0=0.5, variance=2.0)

    start = time.perf_counter()
    state = prior
    for phi, yy in zip(Phi, y):
        state = nig_update(state, phi, yy)
    elapsed = time.perf_counter() - start

    L0 = prior.precision
    L = L0 + Phi.T @ Phi
    mean = np.linalg.solve(L, L0 @ prior.mean + Phi.T @ y)
    b = prior.b + y @ y + prior.mean @ L0 @ prior.mean - mean @ L @ mean
    R = linalg.cholesky(L, lower=False)

    err_mean = np.max(np.abs(state.mean - mean))
    err_b = abs(state.b - b) / b
    err_R = np.linalg.norm(np.triu(state.factor) - R)
    ok = err_mean <= 1e-8 and err_b <= 1e-6 and err_R <= 1e-8 and elapsed < 1.0 and state.a == prior.a + N
    record(1, ok, f"mean {err_mean:.1e}, b rel {err_b:.1e}, factor {err_R:.1e}, {elapsed:.3f} s")
    assert ok


# -- 2. predictive ---------------------------------------------------------


def test_criterion_02_predictive(record):
    rng = np.random.default_rng(12)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        p = StudentTParams(rng.uniform(0.5, 50), rng.normal(0, 5), rng.uniform(0.01, 20))
        spread = float(p.spread)
        total, _ = integrate.quad(lambda v: np.exp(t_log_density(v, p)), p.loc - 50 * spread,
                                  p.loc + 50 * spread, limit=400, epsabs=1e-13, epsrel=1e-12)
        # Mass beyond 50 spreads belongs to the density too; add it exactly.
        tail = 2 * student_t.sf(50.0, p.dof)
        worst = max(worst, abs(total + tail - 1.0))

    n = 8
    min_scale = np.inf
    for _ in range(10_000):
        Rf = np.triu(rng.standard_normal((n, n)), 1) + np.diag(rng.uniform(1e-3, 5, n))
        s = NIGState(n + rng.uniform(0.1, 20), rng.uniform(1e-6, 10), rng.standard_normal(n), Rf)
        p = predictive_params(s, rng.standard_normal(n) * rng.uniform(0.01, 10))
        min_scale = min(min_scale, float(p.scale))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and min_scale > 0 and elapsed < 10
    record(2, ok, f"max |integral - 1| {worst:.1e}, min scale {min_scale:.2e}, {elapsed:.2f} s")
    assert ok


# -- 3. features -----------------------------------------------------------


def test_criterion_03_feature_fidelity(record):
    rng = np.random.default_rng(13)
    start = time.perf_counter()
    spec = KernelSpec((1.0, 1.0, 1.0))
    X = rng.standard_normal((200, 3))
    Xp = X + 0.7 * rng.standard_normal((200, 3))
    exact = np.array([spec(a, b) for a, b in zip(X, Xp)])
    med = {}
    norm_err = 0.0
    for J in (50, 2000):
        om = sample_frequencies(spec, J, 3, 5)
        F, Fp = feature_matrix(X, om), feature_matrix(Xp, om)
        norm_err = max(norm_err, np.max(np.abs(np.sum(F * F, 1) - 1.0)))
        med[J] = float(np.median(np.abs(np.sum(F * Fp, 1) - exact)))
    elapsed = time.perf_counter() - start
    ok = norm_err <= 1e-12 and med[2000] < med[50] and med[2000] < 0.05 and elapsed < 5
    record(3, ok, f"norm err {norm_err:.1e}, median err J=50 {med[50]:.4f}, J=2000 {med[2000]:.4f}, "
                  f"{elapsed:.2f} s")
    assert ok


# -- 4. particle filter mechanics -----------------------------------------


def test_criterion_04_pf_mechanics(record):
    rng = np.random.default_rng(14)
    logw = rng.normal(0, 3, 40)
    w, _ = pf_core.normalize_log_weights(logw)
    sum_err = abs(w.sum() - 1.0)

    M, trials = 40, 10_000
    counts = np.empty((trials, w.size))
    for i in range(trials):
        counts[i] = np.bincount(pf_core.systematic_resample(w, M, rng), minlength=w.size)
    # A systematic count is floor(M w) plus a Bernoulli draw on the fractional part.
    frac = M * w - np.floor(M * w)
    se = np.sqrt(frac * (1 - frac) / trials)
    dev = np.abs(counts.mean(0) - M * w)
    within = np.all(dev <= 3 * se + 1e-12)
    floor_ceil = np.all((counts >= np.floor(M * w)) & (counts <= np.ceil(M * w)))

    X = rng.standard_normal((M, 3))
    oracle = sum(w[m] * X[m] for m in range(M))
    mmse_err = np.max(np.abs(pf_core.mmse(X, w) - oracle))
    ok = sum_err <= 1e-9 and within and floor_ceil and mmse_err <= 1e-12
    z = np.max(np.where(se > 0, dev / np.maximum(se, 1e-300), 0.0))
    record(4, ok, f"sum err {sum_err:.1e}, max multiplicity deviation {z:.2f} sigma over {trials} trials, "
                  f"counts within floor/ceil: {floor_ceil}, mmse err {mmse_err:.1e}")
    assert ok


# -- 5. gen_A ensemble -----------------------------------------------------


def run_gen_a(seed):
    run = gen_A(2000, seed, 0.001, 0.001)
    Y = run.observations
    Z = (Y - Y[:1000].mean(0)) / Y[:1000].std(0)
    cfg = FilterConfig(2, 1, M=500, J_x=50, J_y=50)
    ens = Ensemble.from_dictionary(cfg, 10, seed, 1000, GEN_A_GRID)
    start = time.perf_counter()
    for y in Z:
        ens.step(y)
    elapsed = time.perf_counter() - start
    est = ens.fused_trajectory(start=1000)
    _, err, corr = latent_scores(est, run.truth[1000:])
    return err, corr, elapsed


@pytest.mark.slow
def test_criterion_05_gen_a_reproduction(record):
    rows, passes, slowest = [], 0, 0.0
    for seed in SEEDS:
        err, corr, elapsed = run_gen_a(seed)
        good = err <= 0.5 and np.all(corr >= 0.8)
        passes += good
        slowest = max(slowest, elapsed)
        rows.append(f"s{seed}: rmse {err:.3f} corr {corr[0]:.2f}/{corr[1]:.2f} {elapsed:.0f}s")
    ok = passes >= 4 and slowest <= 300
    record(5, ok, f"{passes}/5 seeds pass, slowest {slowest:.0f} s; " + "; ".join(rows))
    assert ok


# -- 6. deep reduction -----------------------------------------------------


def test_criterion_06_deep_reduction(record):
    fc = FilterConfig(2, 2, M=40, J_x=6, J_y=5, kernel_x=KernelSpec(0.8), kernel_y=KernelSpec(1.3))
    a = GpssmMember.init(fc, seed=21)
    b = DeepMember.init(DeepConfig.from_filter_config(fc), seed=21)
    Y = np.random.default_rng(6).normal(size=(60, 2))
    identical = True
    for y in Y:
        ra, rb = a.step(y), b.step(y)
        identical &= np.array_equal(ra.x_hat, rb.x_hat)
        identical &= ra.log_evidence_increment == rb.log_evidence_increment
        identical &= np.array_equal(ra.predictive.mean(), rb.predictive.mean())
        identical &= np.array_equal(ra.weights, rb.weights)
    record(6, identical, "60 steps, x_hat, weights, evidence and predictive mean compared with ==")
    assert identical


# -- 7. gen_D deep filter --------------------------------------------------


def run_gen_d(seed):
    run = gen_D(2000, seed)
    Y = run.observations
    Z = (Y - Y[:1000].mean(0)) / Y[:1000].std(0)
    member = DeepMember.init(DeepConfig((2, 3), 4, M=1000, J=50, J_y=50), seed)
    P = np.empty_like(Z)
    start = time.perf_counter()
    for t, y in enumerate(Z):
        P[t] = member.step(y).predictive.mean()
    elapsed = time.perf_counter() - start
    baseline = np.broadcast_to(Z[:1000].mean(0), Z[1000:].shape)
    ratio = metrics_io.rmse(P[1000:], Z[1000:]) / metrics_io.rmse(baseline, Z[1000:])
    return ratio, elapsed


@pytest.mark.slow
def test_criterion_07_gen_d_deep(record):
    rows, passes, slowest = [], 0, 0.0
    for seed in SEEDS:
        ratio, elapsed = run_gen_d(seed)
        passes += ratio <= 0.70
        slowest = max(slowest, elapsed)
        rows.append(f"s{seed}: ratio {ratio:.3f} {elapsed:.0f}s")
    ok = passes >= 4 and slowest <= 600
    record(7, ok, f"{passes}/5 seeds reach ratio <= 0.70, slowest {slowest:.0f} s; " + "; ".join(rows))
    assert ok


# -- 8. ensemble invariants ------------------------------------------------


def test_criterion_08_ensemble_invariants(record):
    S, T0 = 5, 15
    cfg = FilterConfig(2, 1, M=20, J_x=5, J_y=5)
    ens = Ensemble.from_dictionary(cfg, S, 3, T0, (0.5, 1.0, 2.0))
    Y = gen_A(40, 3).observations
    burn_exact, sum_err = True, 0.0
    for t, y in enumerate(Y, start=1):
        w = ens.step(y).weights
        if t <= T0:
            burn_exact &= bool(np.all(w == 1.0 / S))
        else:
            sum_err = max(sum_err, abs(w.sum() - 1.0))

    rng = np.random.default_rng(8)
    events, sizes_ok = 0, True
    while events < 100:
        ens.log_weights = np.log(pf_core.normalize_log_weights(rng.normal(0, 6, S))[0] + 1e-300)
        if ens.keep_and_drop():
            events += 1
            sizes_ok &= len(ens.members) == S and ens.log_weights.shape == (S,)
            sizes_ok &= abs(ens.weights.sum() - 1.0) <= 1e-9
    ok = burn_exact and sum_err <= 1e-9 and sizes_ok
    record(8, ok, f"burn-in weights exactly 1/S: {burn_exact}, max sum err {sum_err:.1e}, "
                  f"S preserved over {events} keep-and-drop events: {sizes_ok}")
    assert ok


# -- 9. alignment invariance ----------------------------------------------


def test_criterion_09_alignment_invariance(record):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 5))
        X = rng.standard_normal((200, d)) @ np.diag(rng.uniform(0.5, 3, d))
        R = random_orthogonal(rng, d)
        c = float(np.exp(rng.uniform(np.log(0.1), np.log(10))))
        A = alignment.svd_standardize(X)
        B = alignment.svd_standardize(X @ R * c)
        signs = np.sign(np.sum(A * B, 0))
        worst = max(worst, np.max(np.abs(A - B * signs)))
    ok = worst <= 1e-9
    record(9, ok, f"max entry diff {worst:.1e} over 20 rotations and scales")
    assert ok


# -- 10. real-data stretch -------------------------------------------------


def test_criterion_10_actuator(record, tmp_path):
    path = os.environ.get("RFSSM_ACTUATOR_CSV")
    if not path:
        record(10, True, "non-blocking; skipped because RFSSM_ACTUATOR_CSV is not set")
        pytest.skip("set RFSSM_ACTUATOR_CSV to a CSV of 1024 rows to run this check")
    argv = ["filter", "--obs", path, "--T0", "512", "--dims", "2", "--seed", "1", "--out-dir", str(tmp_path)]
    cols = os.environ.get("RFSSM_ACTUATOR_COLUMNS")
    if cols:
        argv += ["--obs-columns", cols]
    code = cli.run(argv)
    assert code == 0
    rmse = json.loads((tmp_path / "metrics.json").read_text())["rmse"]
    band = abs(rmse - 0.295) <= 0.15
    record(10, True, f"pipeline completed, one-step RMSE {rmse:.3f} "
                     f"({'inside' if band else 'outside'} the 0.295 +/- 0.15 band, non-blocking)")


# -- 11. Student's t versus Gaussian harness -------------------------------


def test_criterion_11_gaussian_comparison(record, tmp_path):
    gen_A(300, 2).save(tmp_path, "a")
    out = tmp_path / "cmp"
    code = cli.run(["ensemble", "--obs", str(tmp_path / "a_obs.csv"), "--truth", str(tmp_path / "a_truth.csv"),
                    "--dims", "2", "--S", "3", "--M", "50", "--J", "10", "--T0", "150",
                    "--dict-grid", "1", "--compare-gaussian", "--threads", "1", "--out-dir", str(out)])
    curves = metrics_io.load_csv(out / "comparison_curves.csv")
    summary = json.loads((out / "metrics.json").read_text())["comparison"]
    names = {"rmse_student_t", "mnll_student_t", "rmse_gaussian", "mnll_gaussian"}
    ok = code == 0 and names <= set(curves.columns) and curves.T == 150 and np.all(np.isfinite(curves.observations))
    t, g = summary["student_t"], summary["gaussian"]
    record(11, ok, f"both curves emitted; final rmse t {t['rmse']:.3f} vs gaussian {g['rmse']:.3f}, "
                   f"mnll t {t['mnll']:.3f} vs gaussian {g['mnll']:.3f} (reported, not asserted)")
    assert ok
