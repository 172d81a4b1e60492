import numpy as np
import pytest

from bayesid.hessian import (HessianSizeError, activation_grads, clamp_psd, dump_hessian_csv,
                             fc_hessian_diag, fc_hessian_exact, finite_diff_hessian,
                             finite_diff_scalar, lstm_hessian_diag, mac_count, mlp_hessian_diag,
                             pre_activation_hessians, rnn_hessian_diag, unvec, vec)
from bayesid.models import LstmNetwork, MlpNetwork, RnnNetwork
from bayesid.models.recurrent import GATES

from conftest import rel_err, tanh_231


def _batch(seed, n_in=2, N=8):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(N, n_in)), rng.normal(size=N)


def test_vec_is_column_stacking():
    A = np.array([[1, 2], [3, 4]])
    assert vec(A).tolist() == [1, 3, 2, 4]
    np.testing.assert_array_equal(unvec(vec(A), A.shape), A)


class TestFcDiag:
    def test_scalar_linear_regression(self):
        net = MlpNetwork([[[0.7]]], ["identity"])
        H = mlp_hessian_diag(net, [[2.0]], [1.0])
        assert H["W1"][0, 0] == 4.0

    def test_identity_has_no_curvature_term(self):
        net = MlpNetwork.init(3, [4], "identity", seed=0)
        X, y = _batch(0, 3)
        yhat, trace = net.forward(X)
        dL_da = activation_grads(net, trace, yhat - y)
        _, H_out = fc_hessian_diag(net, trace, 1, None, dL_da[1])
        _, H_hid = fc_hessian_diag(net, trace, 0, H_out, dL_da[0])
        # without the s'' term the hidden curvature is the squared readout
        np.testing.assert_allclose(H_hid, np.tile(net.weights[1][0] ** 2, (len(X), 1)))
        np.testing.assert_allclose(H_out, 1.0)

    @pytest.mark.parametrize("seed", range(5))
    def test_231_last_hidden_layer_vs_fd(self, seed):
        net = tanh_231(seed)
        X, y = _batch(seed)
        fd = finite_diff_hessian(net, X, y, eps=1e-4)
        an = mlp_hessian_diag(net, X, y)
        assert rel_err(an["W1"], fd["W1"]) < 1e-5
        assert rel_err(an["W2"], fd["W2"]) < 1e-5

    def test_requires_next_hessian_below_output(self):
        net = tanh_231(0)
        yhat, trace = net.forward(np.ones((2, 2)))
        with pytest.raises(ValueError, match="output layer"):
            fc_hessian_diag(net, trace, 0, None, np.zeros((2, 3)))

    def test_output_seed_is_one(self):
        net = tanh_231(1)
        X, y = _batch(1)
        assert pre_activation_hessians(net, X, y)[-1].tolist() == [1.0]


class TestFcExact:
    def test_single_linear_layer_outer_product(self):
        x = np.array([[1.5, -2.0, 0.5]])
        net = MlpNetwork([np.ones((1, 3))], ["identity"])
        block = fc_hessian_exact(net, x, [0.0], 0)
        np.testing.assert_allclose(block, np.outer(x[0], x[0]))
        assert np.linalg.matrix_rank(block) == 1

    @pytest.mark.parametrize("seed", range(5))
    def test_scalar_output_final_hidden_matches_simplified(self, seed):
        rng = np.random.default_rng(seed)
        net = MlpNetwork.init(3, [4, 5], "tanh", bias=True, seed=seed)
        X, y = rng.normal(size=(9, 3)), rng.normal(size=9)
        simp = mlp_hessian_diag(net, X, y)["W2"]
        exact = unvec(np.diag(fc_hessian_exact(net, X, y, 1)), net.weights[1].shape)
        assert rel_err(simp, exact) < 1e-10

    @pytest.mark.parametrize("seed", range(5))
    def test_231_every_layer_block_vs_fd(self, seed):
        net = tanh_231(seed)
        X, y = _batch(seed)
        for layer, name in enumerate(["W1", "W2"]):
            block = fc_hessian_exact(net, X, y, layer)
            W = net.weights[layer]
            fd = np.zeros_like(block)
            eps = 1e-4
            flat = vec(W).copy()

            def loss(v):
                work = net.copy()
                work.params[name][...] = unvec(v, W.shape)
                r = work.predict(X) - y
                return 0.5 * np.mean(r * r)

            for a in range(flat.size):
                for b in range(flat.size):
                    ea = np.eye(flat.size)[a] * eps
                    eb = np.eye(flat.size)[b] * eps
                    fd[a, b] = (loss(flat + ea + eb) - loss(flat + ea - eb)
                                - loss(flat - ea + eb) + loss(flat - ea - eb)) / (4 * eps ** 2)
            np.testing.assert_allclose(block, fd, rtol=1e-5, atol=1e-7)

    def test_size_guard(self):
        net = MlpNetwork.init(200, [60], "tanh", seed=0)
        with pytest.raises(HessianSizeError):
            fc_hessian_exact(net, np.zeros((1, 200)), [0.0], 0)

    def test_single_hidden_layer_simplified_equals_exact_everywhere(self):
        net = MlpNetwork.init(4, [6], "sigmoid", bias=True, seed=3)
        X, y = _batch(3, 4, 12)
        s = mlp_hessian_diag(net, X, y, "simplified")
        e = mlp_hessian_diag(net, X, y, "exact")
        for k in s:
            assert rel_err(s[k], e[k]) < 1e-12


def test_batch_linearity():
    net = MlpNetwork.init(3, [4, 3], "tanh", seed=2)
    X, y = _batch(2, 3, 10)
    whole = mlp_hessian_diag(net, X, y)
    parts = [mlp_hessian_diag(net, X[i:i + 1], y[i:i + 1]) for i in range(10)]
    for k in whole:
        np.testing.assert_allclose(whole[k], np.mean([p[k] for p in parts], axis=0),
                                   rtol=1e-12, atol=1e-15)


def test_clamp_keeps_raw():
    raw = {"W1": np.array([[-1.0, 2.0]])}
    out = clamp_psd(raw)
    assert out["W1"].tolist() == [[0.0, 2.0]]
    assert raw["W1"][0, 0] == -1.0


def test_dump_csv(tmp_path):
    paths = dump_hessian_csv({"W1": np.array([[-1.0, 2.0], [3.0, 4.0]])}, tmp_path)
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "index,raw,clamped"
    assert lines[1] == "0,-1.0,0.0"
    assert lines[2] == "1,3.0,3.0"


def _rnn(w_i, w_h, w_o, act="identity"):
    return RnnNetwork([[w_i]], [[w_h]], [[w_o]], activation=act)


_Z3 = np.array([[1.0], [-2.0], [0.5]])
_T3 = np.array([0.2, 0.1, -0.3])


class TestRnnDiag:
    def test_single_step_is_fc(self):
        net = RnnNetwork.init(3, 2, "tanh", seed=0)
        z = np.array([[0.3, -0.2, 0.9]])
        H = rnn_hessian_diag(net, z, [0.1], tau=1)
        mlp = MlpNetwork([net.W_i, net.W_o], ["tanh", "identity"])
        ref = mlp_hessian_diag(mlp, z, [0.1])
        np.testing.assert_allclose(H["W_i"], ref["W1"], rtol=1e-14)
        np.testing.assert_allclose(H["W_o"], ref["W2"], rtol=1e-14)
        assert not np.any(H["W_h"])           # h(0) = 0

    def test_zero_weights(self):
        H = rnn_hessian_diag(_rnn(0.0, 0.0, 0.0), _Z3, _T3, tau=3)
        assert all(not np.any(v) for v in H.values())

    def test_zero_recurrence_keeps_direct_terms_only(self):
        net = _rnn(0.8, 0.0, 1.3)
        full = rnn_hessian_diag(net, _Z3, _T3, tau=3)
        one = rnn_hessian_diag(net, _Z3, _T3, tau=1)
        for k in full:
            np.testing.assert_allclose(full[k], one[k], rtol=1e-15)

    def test_readout_matches_fd(self):
        net = _rnn(0.8, 0.5, 1.3)
        an = rnn_hessian_diag(net, _Z3, _T3, tau=3)
        fd = finite_diff_hessian(net, _Z3, _T3)
        assert rel_err(an["W_o"], fd["W_o"]) < 1e-6

    def test_exact_without_recurrence(self):
        # w_h = 0 and an interpolating readout remove every dropped term
        net = _rnn(0.8, 0.0, 1.3)
        y = net.predict(_Z3)
        an = rnn_hessian_diag(net, _Z3, y, tau=3)
        fd = finite_diff_hessian(net, _Z3, y)
        for k in an:
            assert rel_err(an[k], fd[k]) < 1e-6, k

    def test_tau_checked(self):
        with pytest.raises(ValueError):
            rnn_hessian_diag(_rnn(1, 1, 1), _Z3, _T3, tau=0)


class TestLstmDiag:
    def test_saturated_gates_vanish(self):
        b = {"i": [60.0], "j": [0.0], "f": [60.0], "o": [60.0]}
        net = LstmNetwork({g: [[0.3, -0.4]] for g in GATES}, {g: [[0.2]] for g in GATES},
                          [[1.1]], biases=b)
        Z = np.random.default_rng(0).normal(size=(4, 2))
        H = lstm_hessian_diag(net, Z, np.zeros(4), tau=4)
        for g in ("i", "f", "o"):
            assert np.max(np.abs(H[f"W_i{g}"])) < 1e-20
        assert np.max(np.abs(H["W_ij"])) > 1e-3

    def test_tau_one_is_per_step(self):
        net = LstmNetwork.init(2, 1, seed=4)
        Z = np.random.default_rng(1).normal(size=(1, 2))
        H1 = lstm_hessian_diag(net, Z, [0.2], tau=1)
        fd = finite_diff_hessian(net, Z, [0.2])
        # one step from a zero state: the within-step curvature is exact
        for g in GATES:
            np.testing.assert_allclose(H1[f"W_i{g}"], fd[f"W_i{g}"], rtol=1e-5, atol=1e-9)

    @pytest.mark.parametrize("seed", range(5))
    def test_correlation_with_fd(self, seed):
        rng = np.random.default_rng(seed)
        net = LstmNetwork.init(3, 2, seed=seed)
        Z, y = rng.normal(size=(3, 3)), rng.normal(size=3)
        an = lstm_hessian_diag(net, Z, y, tau=3)
        fd = finite_diff_hessian(net, Z, y)
        a = np.concatenate([an[k].ravel() for k in fd])
        f = np.concatenate([fd[k].ravel() for k in fd])
        assert np.corrcoef(a, f)[0, 1] > 0.9


class TestFiniteDiff:
    def test_quadratic(self):
        assert finite_diff_scalar(lambda w: w * w, 0.3) == pytest.approx(2.0, abs=1e-6)

    def test_linear_loss(self):
        net = MlpNetwork([[[0.5, -0.2]]], ["identity"])
        fd = finite_diff_hessian(net, None, None, loss=lambda m: float(m.params["W1"].sum()))
        assert np.max(np.abs(fd["W1"])) < 1e-4

    def test_agrees_with_exact_oracle(self):
        net = tanh_231(7)
        X, y = _batch(7)
        fd = finite_diff_hessian(net, X, y)
        ex = mlp_hessian_diag(net, X, y, "exact")
        assert rel_err(ex["W1"], fd["W1"]) < 1e-5

    def test_guard(self):
        net = MlpNetwork.init(40, [30], "tanh", seed=0)
        with pytest.raises(HessianSizeError):
            finite_diff_hessian(net, np.zeros((1, 40)), [0.0])

    def test_eps_positive(self):
        with pytest.raises(ValueError):
            finite_diff_hessian(tanh_231(0), *_batch(0), eps=0.0)


class TestMacCount:
    def test_simplified_headline(self):
        assert mac_count("simplified", 100, 100) == 40_200

    def test_exact_formula_value(self):
        # the formula itself gives about 8.03e6, not the published 107.97e6
        assert mac_count("exact", 100, 100) == 8_029_900
        assert abs(mac_count("exact", 100, 100) - 107.97e6) / 107.97e6 > 0.9

    def test_unit_layer(self):
        assert mac_count("exact", 1, 1) == 10

    @pytest.mark.parametrize("m,n", [(0, 1), (1, 0)])
    def test_domain(self, m, n):
        with pytest.raises(ValueError):
            mac_count("exact", m, n)
