import numpy as np
import pytest
from scipy.special import logsumexp

from rfssm import ensemble as ens_mod
from rfssm.ensemble import Ensemble, resolve_threads
from rfssm.errors import ConfigError, DegenerateWeightsError
from rfssm.gpdssm import DeepConfig, DeepMember
from rfssm.gpssm import FilterConfig, GpssmMember
from rfssm.spectral_features import KernelSpec

CONFIG = FilterConfig(d_x=1, d_y=1, M=20, J_x=5, J_y=5)


def data(T=30, seed=0):
    rng = np.random.default_rng(seed)
    return np.sin(np.arange(T) / 3.0)[:, None] + 0.1 * rng.normal(size=(T, 1))


class TestWeights:
    def test_bayes_update(self):
        e = Ensemble.from_dictionary(CONFIG, 4, seed=0, T0=0)
        e.log_weights = np.log([0.1, 0.2, 0.3, 0.4])
        e.update_member_weights(np.array([0.0, -1.0, np.log(2.0), -np.inf]))
        expected = np.array([0.1, 0.2 * np.exp(-1), 0.6, 0.0])
        np.testing.assert_allclose(e.weights, expected / expected.sum())

    def test_all_zero_density(self):
        e = Ensemble.from_dictionary(CONFIG, 2, seed=0, T0=0)
        with pytest.raises(DegenerateWeightsError):
            e.update_member_weights(np.full(2, -np.inf))

    def test_uniform_during_burn_in_then_cumulative(self):
        Y = data(20)
        e = Ensemble.from_dictionary(CONFIG, 5, seed=1, T0=12)
        cum = np.zeros(5)
        for t, y in enumerate(Y, start=1):
            res = e.step(y)
            if t <= 12:
                np.testing.assert_array_equal(res.weights, np.full(5, 0.2))
                continue
            if res.resampled:
                cum = np.zeros(5)
                continue
            cum += res.log_evidence_increments
            np.testing.assert_allclose(res.weights, np.exp(cum - logsumexp(cum)), rtol=1e-10)

    def test_predictive_uses_previous_weights(self):
        Y = data(8)
        e = Ensemble.from_dictionary(CONFIG, 3, seed=2, T0=2)
        for y in Y[:-1]:
            e.step(y)
        prev = e.log_weights.copy()
        res = e.step(Y[-1])
        np.testing.assert_allclose(res.predictive.log_density(Y[-1]),
                                   logsumexp(prev + res.log_evidence_increments), rtol=1e-10)

    def test_identical_members_never_dropped(self):
        m = GpssmMember.init(CONFIG, seed=0)
        e = Ensemble([m.clone() for _ in range(4)], T0=0, seed=0)
        for y in data(10):
            res = e.step(y)
            assert not res.resampled
            np.testing.assert_allclose(res.weights, 0.25)


class TestKeepAndDrop:
    def test_survivors_keep_slots_and_clones_diverge(self):
        e = Ensemble.from_dictionary(CONFIG, 4, seed=3, T0=0)
        for y in data(3):
            e.step(y)
        old = list(e.members)
        e.log_weights = np.log([0.01, 0.01, 0.97, 0.01])
        assert e.keep_and_drop()
        assert e.members[2] is old[2]
        assert sum(m is not o for m, o in zip(e.members, old)) == 3
        np.testing.assert_allclose(e.weights, 0.25)
        y = np.array([0.3])
        xs = [m.step(y).x_hat[0] for m in e.members]
        assert len(set(xs)) == 4

    def test_not_triggered_above_half(self):
        e = Ensemble.from_dictionary(CONFIG, 4, seed=3, T0=0)
        e.log_weights = np.log([0.3, 0.3, 0.2, 0.2])
        assert not e.keep_and_drop()


class TestConstruction:
    def test_member_depends_on_index_not_size(self):
        a = Ensemble.from_dictionary(CONFIG, 3, seed=5, T0=0)
        b = Ensemble.from_dictionary(CONFIG, 6, seed=5, T0=0)
        for ma, mb in zip(a.members, b.members):
            assert ma.omega_x == mb.omega_x
            assert ma.omega_y == mb.omega_y
            np.testing.assert_array_equal(ma.x, mb.x)

    def test_deep_members(self):
        cfg = DeepConfig((1, 2), 1, M=10, J=4, J_y=4)
        e = Ensemble.from_dictionary(cfg, 3, seed=0, T0=1)
        assert all(isinstance(m, DeepMember) for m in e.members)
        res = e.step(np.zeros(1))
        assert len(res.member_estimates) == 3

    def test_unsupported_config(self):
        with pytest.raises(ConfigError):
            Ensemble.from_dictionary(object(), 2, seed=0, T0=0)

    def test_threads_do_not_change_results(self):
        Y = data(15)
        out = []
        for threads in (1, 3):
            e = Ensemble.from_dictionary(CONFIG, 4, seed=7, T0=5, threads=threads)
            out.append([e.step(y).weights for y in Y])
            e.close()
        np.testing.assert_array_equal(out[0], out[1])

    def test_resolve_threads(self, monkeypatch):
        monkeypatch.delenv("RFSSM_THREADS", raising=False)
        assert resolve_threads(3) == 3
        monkeypatch.setenv("RFSSM_THREADS", "2")
        assert resolve_threads(8) == 2
        monkeypatch.setenv("RFSSM_THREADS", "many")
        with pytest.raises(ConfigError):
            resolve_threads()


class TestTrajectories:
    def test_fused_shape_and_standardization(self):
        Y = data(40)
        cfg = FilterConfig(d_x=2, d_y=1, M=20, J_x=5, J_y=5, kernel_x=KernelSpec(1.0))
        e = Ensemble.from_dictionary(cfg, 3, seed=0, T0=10)
        for y in Y:
            e.step(y)
        fused = e.fused_trajectory(start=10)
        assert fused.shape == (30, 2)
        assert np.all(np.isfinite(fused))

    def test_save_load_resume(self, tmp_path):
        Y = data(16)
        full = Ensemble.from_dictionary(CONFIG, 3, seed=4, T0=4)
        ref = [full.step(y).weights for y in Y]
        part = Ensemble.from_dictionary(CONFIG, 3, seed=4, T0=4)
        for y in Y[:9]:
            part.step(y)
        part.save(tmp_path / "ens")
        resumed = Ensemble.load(tmp_path / "ens")
        np.testing.assert_array_equal([resumed.step(y).weights for y in Y[9:]], ref[9:])


def test_functional_aliases():
    e = Ensemble.from_dictionary(CONFIG, 2, seed=0, T0=0)
    res = ens_mod.ensemble_step(e, np.zeros(1))
    ens_mod.update_member_weights(e, np.zeros(2))
    assert isinstance(ens_mod.keep_and_drop(e), bool)
    assert ens_mod.ensemble_predictive(e, [res.predictive] * 2).k == 1
