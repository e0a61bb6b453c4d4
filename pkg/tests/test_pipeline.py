import numpy as np

from rfssm.ensemble import Ensemble
from rfssm.gpssm import FilterConfig, GpssmMember
from rfssm.pipeline import latent_scores, run_sequence
from rfssm.synthetic import gen_A

CONFIG = FilterConfig(d_x=2, d_y=1, M=30, J_x=6, J_y=6)


class TestRunSequence:
    def test_member(self):
        Y = gen_A(T=40, seed=0).observations
        res = run_sequence(GpssmMember.init(CONFIG, seed=0), Y, interval_from=20)
        assert res.mean.shape == (40, 1) and res.estimates.shape == (40, 2)
        assert np.all(np.isnan(res.lower[:20])) and np.all(res.lower[20:] < res.upper[20:])
        assert res.mnll(20) == -np.mean(res.log_density[20:])
        assert res.runtime > 0

    def test_matches_manual_stepping(self):
        Y = gen_A(T=15, seed=1).observations
        res = run_sequence(GpssmMember.init(CONFIG, seed=3), Y)
        member = GpssmMember.init(CONFIG, seed=3)
        for t, y in enumerate(Y):
            step = member.step(y)
            np.testing.assert_array_equal(res.mean[t], step.predictive.mean())
            np.testing.assert_array_equal(res.log_density[t], step.predictive.log_density(y))
        assert res.lower is None

    def test_ensemble_records_weights(self):
        Y = gen_A(T=12, seed=2).observations
        ens = Ensemble.from_dictionary(CONFIG, 3, seed=0, T0=6)
        seen = []
        res = run_sequence(ens, Y, progress=lambda t, r: seen.append(t))
        assert len(res.weights) == 12 and seen == list(range(12))
        np.testing.assert_allclose(res.weights[5], 1 / 3)


class TestLatentScores:
    def test_similarity_copy_scores_perfectly(self):
        rng = np.random.default_rng(0)
        truth = rng.normal(size=(100, 2)) * [1.0, 1.0]
        Q = np.array([[0.6, -0.8], [0.8, 0.6]])
        aligned, err, corr = latent_scores(5 * truth @ Q + 2, truth)
        # truth has near-equal column variances, so z-scoring is close to a similarity map
        assert err < 0.1 and np.all(corr > 0.99)
        assert aligned.shape == truth.shape

    def test_noise_scores_poorly(self):
        rng = np.random.default_rng(1)
        _, err, corr = latent_scores(rng.normal(size=(200, 2)), rng.normal(size=(200, 2)))
        assert err > 0.8 and np.all(np.abs(corr) < 0.3)
