import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from bayesid.data import RegressorConfig
from bayesid.models import LstmNetwork, MlpNetwork, apply_mask
from bayesid.prediction import (PosteriorModel, PredictiveBand, estimate_zeta, free_run_simulate,
                                mc_free_run, predictive_band, predictive_stats, rmse,
                                sample_posterior, sparsity, write_simulation_csv)
from bayesid.synthetic import arx_system


def _linear(w):
    return MlpNetwork([np.atleast_2d(np.asarray(w, dtype=float))], ["identity"])


class TestSamplePosterior:
    def test_degenerate(self):
        net = MlpNetwork.init(3, [4], "tanh", seed=0)
        pm = PosteriorModel(net, {k: np.zeros(v.shape) for k, v in net.params.items()})
        s = sample_posterior(pm, np.random.default_rng(0))
        for k in net.params:
            np.testing.assert_array_equal(s.params[k], net.params[k])

    def test_pruned_and_moments(self):
        net = apply_mask(_linear([[0.4, -1.2, 2.0]]), {"W1": np.array([[True, False, True]])})
        var = np.array([[0.09, 0.5, 0.25]])
        pm = PosteriorModel(net, {"W1": var})
        assert pm.variances["W1"][0, 1] == 0.0
        rng = np.random.default_rng(3)
        draws = np.array([sample_posterior(pm, rng).params["W1"][0] for _ in range(20_000)])
        assert not np.any(draws[:, 1])
        n = len(draws)
        mu = net.params["W1"][0]
        assert np.all(np.abs(draws.mean(axis=0) - mu) <= 4 * np.sqrt(var[0]) / np.sqrt(n))

    def test_vectorised_sampler_clt(self):
        # the stacked sampler used by predictive_stats, at 1e5 draws
        from bayesid.prediction import _sample_stack
        net = _linear([[1.5, 0.0]])
        net.masks["W1"][0, 1] = False
        pm = PosteriorModel(net, {"W1": np.array([[0.16, 1.0]])})
        W = _sample_stack(pm, np.random.default_rng(0), 100_000)["W1"][:, 0, :]
        assert not np.any(W[:, 1])
        assert abs(W[:, 0].mean() - 1.5) <= 4 * 0.4 / np.sqrt(1e5)

    @pytest.mark.parametrize("bad", [{"W1": -np.ones((1, 2))}, {"W1": np.ones((2, 2))},
                                     {"W9": np.ones((1, 2))}])
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            PosteriorModel(_linear([[1.0, 2.0]]), bad)

    def test_negative_zeta(self):
        with pytest.raises(ValueError):
            PosteriorModel(_linear([[1.0]]), {}, zeta=-0.1)


class TestPredictiveStats:
    def test_deterministic(self):
        net = MlpNetwork.init(2, [3], "tanh", seed=1)
        Z = np.random.default_rng(0).normal(size=(5, 2))
        mu, var = predictive_stats(PosteriorModel(net, {}), Z, 10)
        np.testing.assert_array_equal(mu, net.predict(Z))
        assert np.all(var == 0.0)

    def test_aleatoric_only(self):
        net = MlpNetwork.init(2, [3], "tanh", seed=1)
        pm = PosteriorModel(net, {k: np.zeros(v.shape) for k, v in net.params.items()}, 0.04)
        _, var = predictive_stats(pm, np.ones((4, 2)), 100, rng=0)
        assert np.all(var == 0.04)

    def test_linear_push_through(self):
        pm = PosteriorModel(_linear([[1.0]]), {"W1": np.array([[0.25]])}, zeta=0.1)
        mu, var = predictive_stats(pm, [[2.0]], 100_000, rng=5)
        assert abs(mu[0] - 2.0) / 2.0 < 0.03
        assert abs(var[0] - (0.1 + 4 * 0.25)) / 1.1 < 0.03

    def test_mc_error_shrinks(self):
        pm = PosteriorModel(_linear([[1.0]]), {"W1": np.array([[0.25]])})
        errs = []
        for M in (1_000, 10_000, 100_000):
            # average over seeds so the comparison is not a coin flip
            e = [abs(predictive_stats(pm, [[2.0]], M, rng=s)[0][0] - 2.0) for s in range(20)]
            errs.append(np.mean(e))
        assert errs[0] > errs[1] > errs[2]

    def test_variance_floor(self):
        net = MlpNetwork.init(3, [4], "tanh", seed=2)
        pm = PosteriorModel(net, {k: np.full(v.shape, 1e-3) for k, v in net.params.items()}, 0.02)
        band = predictive_band(pm, np.random.default_rng(1).normal(size=(6, 3)), 300, rng=1)
        assert np.all(band.std >= np.sqrt(0.02))
        np.testing.assert_allclose(band.upper - band.lower, 4 * band.std)

    def test_needs_two_samples(self):
        with pytest.raises(ValueError):
            predictive_stats(PosteriorModel(_linear([[1.0]]), {}), [[1.0]], 1)

    def test_chunking_invariant(self):
        pm = PosteriorModel(_linear([[1.0, -0.5]]), {"W1": np.array([[0.2, 0.1]])})
        Z = np.array([[1.0, 2.0], [0.5, -1.0]])
        a = predictive_stats(pm, Z, 1000, rng=3, chunk=1000)
        b = predictive_stats(pm, Z, 1000, rng=3, chunk=1000)
        np.testing.assert_array_equal(a[0], b[0])
        c = predictive_stats(pm, Z, 1000, rng=3, chunk=97)
        np.testing.assert_allclose(c[1], a[1], rtol=0.2)


class TestFreeRun:
    def test_identity_fixed_point(self):
        net = _linear([[0.0, 1.0]])          # y(t) = y(t-1)
        out = free_run_simulate(net, np.zeros(8), [1.0], RegressorConfig(0, 1))
        assert out.tolist() == [1.0] * 7

    def test_zero_network(self):
        out = free_run_simulate(_linear([[0.0, 0.0, 0.0]]), np.ones(6), [3.0],
                                RegressorConfig(1, 1))
        assert not np.any(out)

    def test_arx_ground_truth(self):
        ds = arx_system(200, seed=4, noise_free=True)
        net = _linear([[0.0, 0.5, 0.7]])
        out = free_run_simulate(net, ds.u, ds.y[:1], RegressorConfig(1, 1))
        np.testing.assert_allclose(out, ds.y[1:], atol=1e-10)

    def test_never_reads_measured_outputs(self):
        cfg = RegressorConfig(2, 2)
        net = MlpNetwork.init(cfg.width, [4], "tanh", seed=0)
        u = np.random.default_rng(0).normal(size=30)
        a = free_run_simulate(net, u, [0.1, 0.2], cfg)
        b = free_run_simulate(net, u, np.array([0.1, 0.2]), cfg)
        np.testing.assert_array_equal(a, b)
        assert len(a) == 28

    def test_short_horizon(self):
        with pytest.raises(ValueError, match="horizon"):
            free_run_simulate(_linear([[0.0, 0.0, 0.0, 0.0]]), np.ones(2), [0.0, 0.0],
                              RegressorConfig(1, 2))

    def test_short_init(self):
        with pytest.raises(ValueError, match="initial outputs"):
            free_run_simulate(_linear([[0.0, 0.0, 0.0]]), np.ones(5), [], RegressorConfig(0, 2))

    def test_lstm_deterministic(self):
        cfg = RegressorConfig(1, 1)
        net = LstmNetwork.init(cfg.width, 2, seed=3)
        u = np.random.default_rng(1).normal(size=15)
        np.testing.assert_array_equal(free_run_simulate(net, u, [0.0], cfg),
                                      free_run_simulate(net, u, [0.0], cfg))


class TestMcFreeRun:
    def test_zero_variance_equals_simulation(self):
        cfg = RegressorConfig(1, 1)
        net = MlpNetwork.init(cfg.width, [3], "tanh", seed=2)
        u = np.random.default_rng(2).normal(size=20)
        pm = PosteriorModel(net, {}, zeta=0.01)
        band = mc_free_run(pm, u, [0.0], cfg, 4, rng=0)
        np.testing.assert_allclose(band.mean, free_run_simulate(net, u, [0.0], cfg), rtol=1e-13)
        np.testing.assert_allclose(band.std, 0.1)

    def test_one_draw_per_trajectory(self):
        # y(t) = w y(t-1) with y(0) = 1 gives w**k, so the spread grows with k
        cfg = RegressorConfig(0, 1)
        pm = PosteriorModel(_linear([[0.0, 0.9]]), {"W1": np.array([[0.0, 0.01]])})
        band = mc_free_run(pm, np.zeros(6), [1.0], cfg, 20_000, rng=1)
        assert np.all(np.diff(band.std) > 0)
        assert band.mean[0] == pytest.approx(0.9, abs=0.01)
        assert band.std[0] == pytest.approx(0.1, rel=0.03)

    def test_recurrent_path(self):
        cfg = RegressorConfig(1, 1)
        net = LstmNetwork.init(cfg.width, 2, seed=1)
        pm = PosteriorModel(net, {k: np.full(v.shape, 1e-4) for k, v in net.params.items()})
        band = mc_free_run(pm, np.random.default_rng(0).normal(size=10), [0.0], cfg, 5, rng=0)
        assert band.mean.shape == (9,) and np.all(band.std > 0)


class TestMetrics:
    def test_rmse_zero(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_rmse_hand(self):
        assert rmse([1, 2], [1, 4]) == pytest.approx(np.sqrt(2))

    def test_rmse_length(self):
        with pytest.raises(ValueError):
            rmse([1, 2], [1])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=20))
    def test_rmse_sign_symmetric(self, r):
        r = np.array(r)
        assert rmse(r, 0 * r) == rmse(-r, 0 * r)

    def test_sparsity(self):
        assert sparsity(MlpNetwork.init(3, [3], seed=0)) == 0.0
        W = np.zeros((1, 100))
        W[0, :3] = 1.0
        assert sparsity(_linear(W)) == 0.97

    def test_zeta(self):
        assert estimate_zeta(np.zeros(5)) == 0.0
        assert estimate_zeta([1.0, -1.0]) == 1.0
        z = estimate_zeta(0.1 * np.random.default_rng(0).standard_normal(1000))
        assert 0.008 <= z <= 0.012


def test_simulation_csv(tmp_path):
    band = PredictiveBand(np.array([1.0, 2.0]), np.array([0.1, 0.2]), 10)
    p = write_simulation_csv(tmp_path / "s.csv", [0, 1], [5, 6], band, y_true=[1.1, 1.9])
    rows = list(csv.DictReader(p.open()))
    assert list(rows[0]) == ["t", "u", "y_true", "y_mean", "y_std", "y_lower", "y_upper"]
    assert float(rows[1]["y_upper"]) == pytest.approx(2.4)
    with pytest.raises(ValueError, match="length"):
        write_simulation_csv(tmp_path / "x.csv", [0], [5, 6], band)
