import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrain_acoustics.nn import (
    LSTM,
    Conv1d,
    Dense,
    Dropout,
    GlobalStatPool,
    LayerStateError,
    MaxPool1d,
    ReLU,
    cccp_forward,
    conv1d_forward,
    cross_entropy,
    dropout,
    gsp_forward,
    lstm_step,
    max_pool1d,
    relu,
    softmax,
    softmax_head,
    xavier_init,
)

from gradcheck import check_layer, numeric_grad, rel_error

TOL = 1e-4


def naive_conv(x, w, b):
    C, T = x.shape
    O, _, K = w.shape
    pad = K // 2
    out = np.zeros((O, T))
    for o in range(O):
        for t in range(T):
            acc = b[o]
            for c in range(C):
                for k in range(K):
                    src = t + k - pad
                    if 0 <= src < T:
                        acc += w[o, c, k] * x[c, src]
            out[o, t] = acc
    return out


class TestConv:
    def test_delta_kernel_is_identity(self):
        x = np.arange(6.0)[None]
        out = conv1d_forward(x, np.array([[[0.0, 1.0, 0.0]]]), np.zeros(1))
        np.testing.assert_array_equal(out, x)

    def test_zero_weights_give_bias(self):
        out = conv1d_forward(np.ones((2, 5)), np.zeros((3, 2, 3)), np.array([1.0, -2.0, 0.5]))
        np.testing.assert_array_equal(out, np.repeat([[1.0], [-2.0], [0.5]], 5, axis=1))

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(4, 9))
        w = rng.normal(size=(5, 4, 3))
        b = rng.normal(size=5)
        np.testing.assert_allclose(conv1d_forward(x, w, b), naive_conv(x, w, b), atol=1e-12)

    def test_channel_mismatch(self):
        layer = Conv1d(3, 2, 3, np.random.default_rng(0))
        with pytest.raises(ValueError):
            layer.forward(np.zeros((1, 4, 2)))

    def test_cccp_identity_and_scalar(self):
        x = np.random.default_rng(1).normal(size=(3, 5))
        np.testing.assert_array_equal(cccp_forward(x, np.eye(3), np.zeros(3)), x)
        out = cccp_forward(np.full((1, 4), 2.0), np.array([[3.0]]), np.array([1.0]))
        np.testing.assert_array_equal(out, np.full((1, 4), 7.0))

    def test_cccp_matches_matmul(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(6, 8))
        w = rng.normal(size=(4, 6))
        b = rng.normal(size=4)
        np.testing.assert_allclose(cccp_forward(x, w, b), w @ x + b[:, None], atol=1e-12)


class TestSimpleOps:
    def test_relu(self):
        np.testing.assert_array_equal(relu([-1.0, 2.0]), [0.0, 2.0])

    def test_max_pool_ceil_mode(self):
        np.testing.assert_array_equal(max_pool1d([1.0, 3.0, 2.0]), [3.0, 2.0])

    def test_pool_survives_three_halvings(self):
        x = np.zeros((1, 7, 2))
        for _ in range(3):
            x = MaxPool1d().forward(x)
        assert x.shape == (1, 1, 2)

    def test_dropout_zero_rate_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(dropout(x, 0.0, np.random.default_rng(0), True), x)

    def test_dropout_inference_identity(self):
        x = np.arange(5.0)
        np.testing.assert_array_equal(dropout(x, 0.5, None, training=False), x)

    def test_dropout_inverted_scaling(self):
        out = dropout(np.ones(100000), 0.5, np.random.default_rng(0), True)
        assert set(np.unique(out)) <= {0.0, 2.0}
        assert abs(out.mean() - 1.0) < 0.02


class TestGSP:
    def test_constant_channel(self):
        np.testing.assert_allclose(gsp_forward(np.full((1, 4), 2.0)), [2.0, 2.0, 2.0])

    def test_two_frames(self):
        np.testing.assert_allclose(gsp_forward(np.array([[0.0, 2.0]])), [2.0, 1.0, np.sqrt(2.0)])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 4), st.integers(0, 10_000))
    def test_permutation_invariance_and_bounds(self, T, C, seed):
        rng = np.random.default_rng(seed)
        x = rng.normal(size=(C, T))
        out = gsp_forward(x)
        perm = gsp_forward(x[:, rng.permutation(T)])
        np.testing.assert_allclose(out, perm, rtol=0, atol=1e-14)
        mx, mean, rms = out[:C], out[C:2 * C], out[2 * C:]
        assert np.all(mx >= mean - 1e-15)
        assert np.all(rms >= np.abs(mean) - 1e-15)


class TestLSTMStep:
    def _zero_params(self, H=3, D=2):
        p = {}
        for g in "ifoc":
            p[f"W_x{g}"] = np.zeros((H, D))
            p[f"W_h{g}"] = np.zeros((H, H))
            p[f"b_{g}"] = np.zeros(H)
        return p

    def test_all_zero(self):
        h, c = lstm_step(np.ones(2), np.zeros(3), np.zeros(3), self._zero_params())
        np.testing.assert_array_equal(h, 0.0)
        np.testing.assert_array_equal(c, 0.0)

    def test_zero_weights_carry_cell(self):
        h, c = lstm_step(np.ones(2), np.zeros(3), np.full(3, 2.0), self._zero_params())
        np.testing.assert_allclose(c, 1.0)
        np.testing.assert_allclose(h, 0.5 * np.tanh(1.0))
        assert abs(h[0] - 0.3808) < 1e-4

    def test_random_steps_bounded(self):
        rng = np.random.default_rng(3)
        H, D = 4, 3
        for _ in range(10_000 // 50):
            p = {k: rng.normal(scale=2.0, size=v.shape) for k, v in self._zero_params(H, D).items()}
            h, c = np.zeros(H), np.zeros(H)
            for _ in range(50):
                h, c = lstm_step(rng.normal(size=D), h, c, p)
                assert np.all(np.abs(h) < 1)

    def test_batched_layer_matches_step(self):
        rng = np.random.default_rng(4)
        layer = LSTM(3, 4, rng)
        x = rng.normal(size=(2, 5, 3))
        hs = layer.forward(x)
        for b in range(2):
            h, c = np.zeros(4), np.zeros(4)
            for t in range(5):
                h, c = lstm_step(x[b, t], h, c, layer.params)
                np.testing.assert_allclose(hs[b, t], h, atol=1e-14)


class TestSoftmax:
    def test_zero_head_uniform(self):
        p = softmax_head(np.ones(4), np.zeros((9, 4)), np.zeros(9))
        np.testing.assert_allclose(p, np.full(9, 1 / 9), atol=1e-15)

    def test_shift_invariance(self):
        z = np.random.default_rng(5).normal(size=9)
        np.testing.assert_allclose(softmax(z), softmax(z + 123.4), atol=1e-15)

    def test_saturation(self):
        z = np.zeros(9)
        z[4] = 50.0
        assert abs(softmax(z)[4] - 1.0) < 1e-15

    def test_probability_vectors(self):
        p = softmax(np.random.default_rng(6).normal(scale=10, size=(100, 9)))
        assert np.all(p >= 0)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)

    def test_cross_entropy_zero_at_optimum(self):
        probs = np.eye(3)
        loss, d = cross_entropy(probs, np.arange(3))
        assert loss == 0.0
        np.testing.assert_array_equal(d, 0.0)


class TestXavier:
    def test_bound(self):
        w = xavier_init((1000, 3), np.random.default_rng(0))
        assert np.all(np.abs(w) <= 1.0)

    def test_variance(self):
        w = xavier_init((100_000,), np.random.default_rng(1), n_in=300)
        assert abs(w.var() - 1 / 300) < 0.05 / 300

    def test_reproducible(self):
        a = xavier_init((4, 5), np.random.default_rng(7))
        b = xavier_init((4, 5), np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)


class TestGradients:
    """Finite-difference agreement, relative error < 1e-4 at perturbation 1e-5."""

    def _assert(self, errors):
        bad = {k: v for k, v in errors.items() if not v < TOL}
        assert not bad, bad

    @pytest.mark.parametrize("kernel", [1, 3])
    def test_conv(self, kernel):
        rng = np.random.default_rng(10)
        layer = Conv1d(3, 4, kernel, rng)
        layer.params["bias"] = rng.normal(size=4)
        self._assert(check_layer(layer, rng.normal(size=(2, 5, 3)), rng))

    def test_relu_off_kink(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(2, 4, 3))
        x[np.abs(x) < 1e-2] = 0.5
        self._assert(check_layer(ReLU(), x, rng))

    @pytest.mark.parametrize("T", [6, 7])
    def test_max_pool(self, T):
        rng = np.random.default_rng(12)
        self._assert(check_layer(MaxPool1d(), rng.normal(size=(2, T, 3)), rng))

    def test_gsp_all_branches(self):
        rng = np.random.default_rng(13)
        self._assert(check_layer(GlobalStatPool(), rng.normal(size=(2, 5, 3)), rng))

    def test_dense(self):
        rng = np.random.default_rng(14)
        layer = Dense(6, 4, rng)
        self._assert(check_layer(layer, rng.normal(size=(3, 6)), rng))

    def test_dropout_fixed_mask(self):
        rng = np.random.default_rng(15)
        layer = Dropout(0.3)
        x = rng.normal(size=(4, 5))
        y = layer.forward(x, True, np.random.default_rng(0))
        probe = rng.normal(size=y.shape)
        dx = layer.backward(probe)
        num = numeric_grad(lambda: float(np.sum(layer.forward(x, True, np.random.default_rng(0)) * probe)), x)
        assert rel_error(dx, num) < TOL

    def test_lstm_unrolled_five_steps(self):
        rng = np.random.default_rng(16)
        layer = LSTM(3, 4, rng)
        for g in "ifoc":
            layer.params[f"b_{g}"] = rng.normal(size=4)
        self._assert(check_layer(layer, rng.normal(size=(2, 5, 3)), rng))

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(17)
        logits = rng.normal(size=(4, 9))
        labels = rng.integers(0, 9, size=4)
        _, d = cross_entropy(softmax(logits), labels)
        num = numeric_grad(lambda: cross_entropy(softmax(logits), labels)[0], logits)
        assert rel_error(d, num) < TOL

    def test_backward_requires_forward(self):
        with pytest.raises(LayerStateError):
            Dense(2, 2, np.random.default_rng(0)).backward(np.zeros((1, 2)))
