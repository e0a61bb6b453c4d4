import json

import numpy as np
import pytest
from scipy import integrate, stats

from rfssm.conjugate_blr import StudentTParams, TMixture
from rfssm.errors import InvalidSpecError, SchemaError
from rfssm.metrics_io import (
    SeriesDataset,
    coverage,
    emit_report,
    load_csv,
    mnll,
    normalize,
    pearson,
    rmse,
    save_csv,
    save_observations,
)


class TestCsv:
    def test_roundtrip(self, tmp_path):
        Y = np.random.default_rng(0).normal(size=(500, 3))
        save_observations(Y, tmp_path / "obs.csv", t0=1)
        ds = load_csv(tmp_path / "obs.csv", columns=["t", "y1", "y2", "y3"])
        assert ds.T == 500
        np.testing.assert_array_equal(ds.observations, Y)
        np.testing.assert_array_equal(ds.time, np.arange(1, 501))

    def test_header_mismatch(self, tmp_path):
        save_observations(np.zeros((3, 1)), tmp_path / "obs.csv")
        with pytest.raises(SchemaError):
            load_csv(tmp_path / "obs.csv", columns=["t", "u1"])

    def test_parse_error_reports_line(self, tmp_path):
        (tmp_path / "bad.csv").write_text("a,b\n1,2\n3,oops\n")
        with pytest.raises(SchemaError, match=":3:"):
            load_csv(tmp_path / "bad.csv")

    def test_nan_rejected(self, tmp_path):
        (tmp_path / "nan.csv").write_text("a\n1\nnan\n")
        with pytest.raises(SchemaError, match="NaN"):
            load_csv(tmp_path / "nan.csv")

    def test_ragged_and_empty(self, tmp_path):
        (tmp_path / "r.csv").write_text("a,b\n1,2\n3\n")
        with pytest.raises(SchemaError):
            load_csv(tmp_path / "r.csv")
        (tmp_path / "e.csv").write_text("")
        with pytest.raises(SchemaError):
            load_csv(tmp_path / "e.csv")

    def test_column_selection(self, tmp_path):
        save_csv(tmp_path / "d.csv", ["u", "y", "x"], np.arange(12.0).reshape(4, 3), time=False)
        ds = load_csv(tmp_path / "d.csv", obs_columns=["y"], truth_columns=["x"], split=2)
        np.testing.assert_array_equal(ds.observations[:, 0], [1, 4, 7, 10])
        np.testing.assert_array_equal(ds.truth[:, 0], [2, 5, 8, 11])
        assert ds.split == 2
        with pytest.raises(SchemaError):
            load_csv(tmp_path / "d.csv", obs_columns=["missing"])


class TestNormalize:
    def test_training_statistics(self):
        rng = np.random.default_rng(0)
        ds = SeriesDataset(rng.normal(3.0, 2.0, size=(100, 2)), split=60)
        out = normalize(ds)
        np.testing.assert_allclose(out.observations[:60].mean(0), 0.0, atol=1e-12)
        np.testing.assert_allclose(out.observations[:60].std(0), 1.0, atol=1e-12)
        np.testing.assert_allclose(out.inverse_transform(out.observations), ds.observations, atol=1e-12)

    def test_custom_range(self):
        ds = SeriesDataset(np.arange(20.0)[:, None], split=10)
        out = normalize(ds, stat_range=(10, 20))
        np.testing.assert_allclose(out.observations[10:].mean(), 0.0, atol=1e-12)

    def test_constant_column(self):
        ds = SeriesDataset(np.column_stack([np.arange(10.0), np.ones(10)]), split=10)
        with pytest.raises(InvalidSpecError):
            normalize(ds)

    def test_split_out_of_range(self):
        with pytest.raises(InvalidSpecError):
            SeriesDataset(np.zeros((5, 1)), split=9)


class TestScores:
    def test_rmse(self):
        truth = np.random.default_rng(0).normal(size=(50, 2))
        assert rmse(truth, truth) == 0.0
        assert rmse(truth + 0.7, truth) == pytest.approx(0.7)
        est = truth + np.random.default_rng(1).normal(size=(50, 2))
        direct = np.mean([np.sqrt(np.mean((est[10:, j] - truth[10:, j]) ** 2)) for j in range(2)])
        assert rmse(est, truth, range=(10, 50)) == pytest.approx(direct, rel=1e-14)
        with pytest.raises(ValueError):
            rmse(truth, truth[:, :1])

    def test_pearson(self):
        x = np.linspace(0, 1, 20)
        np.testing.assert_allclose(pearson(np.column_stack([x, -x]), np.column_stack([2 * x, x])), [1, -1])

    def test_mnll_symmetric_and_monotone(self):
        y = np.array([[0.0], [0.0]])
        sym = [StudentTParams(5.0, np.array([0.3]), np.array([1.0])),
               StudentTParams(5.0, np.array([-0.3]), np.array([1.0]))]
        assert mnll(sym[:1], y[:1]) == pytest.approx(mnll(sym[1:], y[1:]))
        vals = [mnll([StudentTParams(5.0, np.array([0.0]), np.array([s]))], y[:1]) for s in (1.0, 0.1, 0.01)]
        assert vals[0] > vals[1] > vals[2]

    def test_mnll_matches_quadrature_normalized_density(self):
        mix = TMixture([0.3, 0.7], [[0.0], [1.0]], [[0.5], [1.5]], [3.0, 6.0])
        dens = lambda v: 0.3 * stats.t.pdf(v, 3.0, 0.0, 0.5) + 0.7 * stats.t.pdf(v, 6.0, 1.0, 1.5)
        Z, _ = integrate.quad(dens, -np.inf, np.inf)
        ys = np.array([[-0.4], [2.2]])
        expected = -np.mean(np.log([dens(v) / Z for v in ys[:, 0]]))
        assert mnll([mix, mix], ys) == pytest.approx(expected, rel=1e-8)

    def test_mnll_range_and_missing(self):
        p = StudentTParams(5.0, np.zeros(1), np.ones(1))
        with pytest.raises(ValueError):
            mnll([p, None], np.zeros((2, 1)))
        assert np.isfinite(mnll([None, p], np.zeros((2, 1)), range=(1, 2)))
        with pytest.raises(ValueError):
            mnll([p], np.zeros((2, 1)))

    def test_t_interval_coverage(self):
        # calibrated predictive: observations drawn from the same t
        rng = np.random.default_rng(0)
        dof, loc, sc = 4.0, rng.normal(size=2000), rng.uniform(0.5, 2.0, 2000)
        y = loc + sc * rng.standard_t(dof, 2000)
        lo, hi = stats.t.interval(0.95, dof, loc, sc)
        assert abs(coverage(lo, hi, y) - 0.95) < 0.03


class TestReport:
    def test_files(self, tmp_path):
        T = 6
        results = {
            "metrics": {"rmse": 0.5, "mnll": np.float64(1.2), "runtime": None, "extra": np.arange(2)},
            "trajectories": {"latent_estimate": (np.ones((T, 2)), 5)},
            "plot": {"truth": np.zeros(T), "estimate": np.ones(T), "lower": -np.ones(T),
                     "upper": 2 * np.ones(T), "t0": 1},
        }
        paths = emit_report(results, tmp_path / "out")
        assert {p.name for p in paths} == {"metrics.json", "latent_estimate.csv", "plot.csv"}
        m = json.loads((tmp_path / "out" / "metrics.json").read_text())
        assert m == {"rmse": 0.5, "mnll": 1.2, "runtime": None, "extra": [0, 1], "schema": 1}
        lines = (tmp_path / "out" / "plot.csv").read_text().splitlines()
        assert lines[0] == "t,truth1,estimate1,lower1,upper1"
        assert lines[1] == "1,0.0,1.0,-1.0,2.0"
        assert (tmp_path / "out" / "latent_estimate.csv").read_text().splitlines()[1].startswith("5,")

    def test_deterministic(self, tmp_path):
        res = {"metrics": {"rmse": 1 / 3, "mnll": 2.0, "runtime": None}}
        emit_report(res, tmp_path / "a")
        emit_report(res, tmp_path / "b")
        assert (tmp_path / "a" / "metrics.json").read_bytes() == (tmp_path / "b" / "metrics.json").read_bytes()

    def test_required_keys(self, tmp_path):
        with pytest.raises(ValueError):
            emit_report({"metrics": {"rmse": 1.0}}, tmp_path)
