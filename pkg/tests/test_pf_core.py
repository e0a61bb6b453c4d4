import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from rfssm.errors import DegenerateWeightsError
from rfssm.pf_core import (
    ParticleSystem,
    ess,
    in_place_ancestors,
    mmse,
    normalize_log_weights,
    systematic_resample,
)

weight_vectors = st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=60).map(
    lambda v: np.asarray(v) / np.sum(v))


class TestNormalize:
    def test_matches_logsumexp(self):
        logw = np.array([-1000.0, -1001.0, -1002.5])
        w, inc = normalize_log_weights(logw)
        np.testing.assert_allclose(w, np.exp(logw - logsumexp(logw)))
        np.testing.assert_allclose(inc, logsumexp(logw) - np.log(3))

    def test_neg_inf_entries(self):
        w, _ = normalize_log_weights(np.array([-np.inf, 0.0, 0.0]))
        np.testing.assert_allclose(w, [0, 0.5, 0.5])

    @pytest.mark.parametrize("logw", [[-np.inf, -np.inf], [np.nan, 0.0]])
    def test_degenerate(self, logw):
        with pytest.raises(DegenerateWeightsError):
            normalize_log_weights(np.array(logw))

    def test_ess_bounds(self):
        assert ess(np.full(10, 0.1)) == pytest.approx(10)
        assert ess(np.eye(10)[3]) == pytest.approx(1)


class TestSystematic:
    @settings(max_examples=60, deadline=None)
    @given(weight_vectors, st.integers(1, 80), st.integers(0, 2**31))
    def test_counts_are_floor_or_ceil(self, w, M, seed):
        idx = systematic_resample(w, M, np.random.default_rng(seed))
        counts = np.bincount(idx, minlength=w.size)
        assert counts.sum() == M
        assert np.all(counts >= np.floor(M * w) - 1e-9 - 1)  # rounding of the cumulative sum
        assert np.all(counts <= np.ceil(M * w) + 1)
        assert np.all(np.diff(idx) >= 0)

    def test_unbiased(self):
        w = np.array([0.1, 0.25, 0.05, 0.6])
        rng = np.random.default_rng(0)
        total = np.zeros(4)
        for _ in range(4000):
            total += np.bincount(systematic_resample(w, 7, rng), minlength=4)
        np.testing.assert_allclose(total / (4000 * 7), w, atol=0.005)


class TestInPlaceAncestors:
    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(0, 19), min_size=20, max_size=20))
    def test_permutation_with_fixed_survivors(self, raw):
        idx = np.sort(np.asarray(raw))
        out = in_place_ancestors(idx)
        np.testing.assert_array_equal(np.sort(out), idx)
        for a in np.unique(idx):
            assert out[a] == a

    def test_identity_untouched(self):
        np.testing.assert_array_equal(in_place_ancestors(np.arange(6)), np.arange(6))


class TestParticleSystem:
    def test_resample_resets_weights(self):
        ps = ParticleSystem([np.arange(8.0).reshape(4, 2)], np.log([0.1, 0.2, 0.3, 0.4]))
        ps.resample(np.array([3, 3, 2, 1]))
        np.testing.assert_array_equal(ps.states[0][:, 0], [6, 6, 4, 2])
        np.testing.assert_allclose(ps.weights, 0.25)

    def test_mmse(self):
        X = np.array([[1.0, 0.0], [3.0, 2.0]])
        np.testing.assert_allclose(mmse(X, [0.25, 0.75]), [2.5, 1.5])
