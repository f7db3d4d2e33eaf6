"""Layers with explicit forward/backward passes.

Activations are laid out channels-last: sequences are ``(batch, time, channels)`` and
vectors are ``(batch, features)``. Each layer caches what its backward pass needs
during ``forward`` and accumulates parameter gradients into ``self.grads``.
"""

from __future__ import annotations

import os

import numpy as np

DEBUG = bool(os.environ.get("TERRAIN_ACOUSTICS_DEBUG"))


class LayerStateError(RuntimeError):
    """backward() called without a cached forward pass."""


def xavier_init(shape, rng: np.random.Generator, n_in: int | None = None,
                gain: float = 1.0) -> np.ndarray:
    """Uniform on [-a, a] with a = gain * sqrt(3 / n_in); ``n_in`` defaults to prod(shape[1:])."""
    if n_in is None:
        n_in = int(np.prod(shape[1:])) if len(shape) > 1 else int(shape[0])
    if n_in <= 0:
        raise ValueError("n_in must be positive")
    a = gain * np.sqrt(3.0 / n_in)
    return rng.uniform(-a, a, size=shape)


def _check_finite(name, arr):
    if DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values after {name}")


class Layer:
    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def _take_cache(self):
        if self._cache is None:
            raise LayerStateError(f"{self.name}: backward without forward")
        cache, self._cache = self._cache, None
        return cache

    def forward(self, x, training=False, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError


class Conv1d(Layer):
    """Stride-1 temporal convolution with 'same' zero padding; kernel 1 is a CCCP layer.

    Weights are stored as ``(out_channels, in_channels, kernel)``.
    """

    def __init__(self, in_channels, out_channels, kernel, rng, name="conv", gain=1.0):
        super().__init__()
        if kernel not in (1, 3):
            raise ValueError("kernel must be 1 or 3")
        self.name = name
        self.in_channels, self.out_channels, self.kernel = in_channels, out_channels, kernel
        self.params["weight"] = xavier_init((out_channels, in_channels, kernel), rng, gain=gain)
        self.params["bias"] = np.zeros(out_channels)
        self.zero_grad()

    def _cols(self, x):
        B, T, C = x.shape
        K = self.kernel
        if K == 1:
            return x.reshape(B * T, C)
        pad = K // 2
        xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
        # (B, T, K, C): cols[b, t, k] = x[b, t + k - pad]
        cols = np.stack([xp[:, k:k + T] for k in range(K)], axis=2)
        return cols.reshape(B * T, K * C)

    def _wmat(self):
        # (O, C, K) -> (K*C, O) matching the cols layout
        return self.params["weight"].transpose(2, 1, 0).reshape(-1, self.out_channels)

    def forward(self, x, training=False, rng=None):
        B, T, C = x.shape
        if C != self.in_channels:
            raise ValueError(f"{self.name}: expected {self.in_channels} channels, got {C}")
        cols = self._cols(x)
        y = cols @ self._wmat() + self.params["bias"]
        self._cache = (cols, x.shape)
        return y.reshape(B, T, self.out_channels)

    def backward(self, dy):
        cols, (B, T, C) = self._take_cache()
        K, O = self.kernel, self.out_channels
        dy2 = dy.reshape(B * T, O)
        dw = (cols.T @ dy2).reshape(K, C, O).transpose(2, 1, 0)
        self.grads["weight"] += dw
        self.grads["bias"] += dy2.sum(axis=0)
        dcols = dy2 @ self._wmat().T
        if K == 1:
            return dcols.reshape(B, T, C)
        dcols = dcols.reshape(B, T, K, C)
        pad = K // 2
        dxp = np.zeros((B, T + 2 * pad, C))
        for k in range(K):
            dxp[:, k:k + T] += dcols[:, :, k]
        return dxp[:, pad:pad + T]


class ReLU(Layer):
    name = "relu"

    def forward(self, x, training=False, rng=None):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._take_cache()


class MaxPool1d(Layer):
    """Kernel-2, stride-2 max pooling over time in ceil mode (odd tails form a 1-wide window)."""

    name = "maxpool"

    def forward(self, x, training=False, rng=None):
        B, T, C = x.shape
        T2 = -(-T // 2)
        if T % 2:
            x = np.concatenate([x, np.full((B, 1, C), -np.inf)], axis=1)
        pairs = x.reshape(B, T2, 2, C)
        idx = np.argmax(pairs, axis=2)
        self._cache = (idx, T)
        return np.take_along_axis(pairs, idx[:, :, None], axis=2)[:, :, 0]

    def backward(self, dy):
        idx, T = self._take_cache()
        B, T2, C = dy.shape
        dx = np.zeros((B, T2, 2, C))
        np.put_along_axis(dx, idx[:, :, None], dy[:, :, None], axis=2)
        return dx.reshape(B, 2 * T2, C)[:, :T]


GSP_BRANCHES = 3


class GlobalStatPool(Layer):
    """Per-channel global max, mean and RMS over time, concatenated as [max | mean | rms]."""

    name = "gsp"

    def forward(self, x, training=False, rng=None):
        B, T, C = x.shape
        idx = np.argmax(x, axis=1)
        mx = np.take_along_axis(x, idx[:, None], axis=1)[:, 0]
        mean = x.mean(axis=1)
        rms = np.sqrt(np.mean(x * x, axis=1))
        self._cache = (x, idx, rms)
        return np.concatenate([mx, mean, rms], axis=1)

    def backward(self, dy):
        x, idx, rms = self._take_cache()
        B, T, C = x.shape
        d_max, d_mean, d_rms = dy[:, :C], dy[:, C:2 * C], dy[:, 2 * C:]
        dx = np.broadcast_to((d_mean / T)[:, None], x.shape).copy()
        safe = np.where(rms > 0, rms, 1.0)
        dx += x * np.where(rms > 0, d_rms / (T * safe), 0.0)[:, None]
        np.add.at(dx, (np.arange(B)[:, None], idx, np.arange(C)[None, :]), d_max)
        return dx


class Flatten(Layer):
    name = "flatten"

    def forward(self, x, training=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._take_cache())


class Dense(Layer):
    """Inner product layer, weights ``(out, in)``."""

    def __init__(self, n_in, n_out, rng, name="fc", gain=1.0):
        super().__init__()
        self.name = name
        self.params["weight"] = xavier_init((n_out, n_in), rng, gain=gain)
        self.params["bias"] = np.zeros(n_out)
        self.zero_grad()

    def forward(self, x, training=False, rng=None):
        if x.shape[-1] != self.params["weight"].shape[1]:
            raise ValueError(f"{self.name}: expected {self.params['weight'].shape[1]} inputs, "
                             f"got {x.shape[-1]}")
        self._cache = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, dy):
        x = self._take_cache()
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.grads["weight"] += dy2.T @ x2
        self.grads["bias"] += dy2.sum(axis=0)
        return dy @ self.params["weight"]


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    name = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, training=False, rng=None):
        if not training or self.rate == 0:
            self._cache = 1.0
            return x
        if rng is None:
            raise ValueError("dropout in training mode needs a generator")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._take_cache()


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


GATES = ("i", "f", "o", "c")


class LSTM(Layer):
    """Single-layer LSTM over ``(batch, steps, features)`` returning all hidden states.

    Gates follow i, f, o = sigmoid(.), g = tanh(.), c_t = f*c + i*g, h_t = o*tanh(c_t).
    """

    def __init__(self, n_in, hidden, rng, name="lstm"):
        super().__init__()
        self.name = name
        self.n_in, self.hidden = n_in, hidden
        for g in GATES:
            self.params[f"W_x{g}"] = xavier_init((hidden, n_in), rng)
            self.params[f"W_h{g}"] = xavier_init((hidden, hidden), rng)
            self.params[f"b_{g}"] = np.zeros(hidden)
        self.zero_grad()

    def _stacked(self):
        p = self.params
        Wx = np.concatenate([p[f"W_x{g}"] for g in GATES])
        Wh = np.concatenate([p[f"W_h{g}"] for g in GATES])
        b = np.concatenate([p[f"b_{g}"] for g in GATES])
        return Wx, Wh, b

    def forward(self, x, training=False, rng=None, h0=None, c0=None):
        B, L, D = x.shape
        H = self.hidden
        Wx, Wh, b = self._stacked()
        h = np.zeros((B, H)) if h0 is None else h0
        c = np.zeros((B, H)) if c0 is None else c0
        xw = x @ Wx.T + b
        hs, steps = [], []
        for t in range(L):
            a = xw[:, t] + h @ Wh.T
            i, f, o = sigmoid(a[:, :H]), sigmoid(a[:, H:2 * H]), sigmoid(a[:, 2 * H:3 * H])
            g = np.tanh(a[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((i, f, o, g, c_prev, h_prev, tc))
            hs.append(h)
        self._cache = (x, steps)
        return np.stack(hs, axis=1)

    def backward(self, dy):
        x, steps = self._take_cache()
        B, L, D = x.shape
        H = self.hidden
        Wx, Wh, _ = self._stacked()
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros(4 * H)
        dx = np.zeros_like(x)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in reversed(range(L)):
            i, f, o, g, c_prev, h_prev, tc = steps[t]
            dh = dy[:, t] + dh_next
            do = dh * tc
            dc = dh * o * (1 - tc * tc) + dc_next
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            da = np.concatenate([di * i * (1 - i), df * f * (1 - f), do * o * (1 - o),
                                 dg * (1 - g * g)], axis=1)
            dWx += da.T @ x[:, t]
            dWh += da.T @ h_prev
            db += da.sum(axis=0)
            dx[:, t] = da @ Wx
            dh_next = da @ Wh
            dc_next = dc * f
        for k, g in enumerate(GATES):
            sl = slice(k * H, (k + 1) * H)
            self.grads[f"W_x{g}"] += dWx[sl]
            self.grads[f"W_h{g}"] += dWh[sl]
            self.grads[f"b_{g}"] += db[sl]
        return dx


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(probs, labels):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    B = probs.shape[0]
    p = probs[np.arange(B), labels]
    loss = float(-np.mean(np.log(np.maximum(p, 1e-300))))
    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    return loss, dlogits / B


# Single-example functional forms. Inputs follow the (channels, time) convention.

def conv1d_forward(x, weight, bias):
    x = np.asarray(x, dtype=np.float64)
    O, C, K = weight.shape
    layer = Conv1d(C, O, K, np.random.default_rng(0))
    layer.params["weight"], layer.params["bias"] = np.asarray(weight, float), np.asarray(bias, float)
    return layer.forward(x.T[None])[0].T


def cccp_forward(x, weight, bias):
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim == 2:
        weight = weight[:, :, None]
    return conv1d_forward(x, weight, bias)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def max_pool1d(x, kernel=2):
    if kernel != 2:
        raise ValueError("only kernel 2 is supported")
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    x2 = x[None] if squeeze else x
    out = MaxPool1d().forward(x2.T[None])[0].T
    return out[0] if squeeze else out


def dropout(x, rate, rng, training=True):
    return Dropout(rate).forward(np.asarray(x, dtype=np.float64), training, rng)


def gsp_forward(x):
    x = np.asarray(x, dtype=np.float64)
    return GlobalStatPool().forward(x.T[None])[0]


def lstm_step(x, h, c, params):
    """One LSTM step for a single example; ``params`` uses the W_x*/W_h*/b_* names."""
    H = params["b_i"].shape[0]
    pre = {g: params[f"W_x{g}"] @ x + params[f"W_h{g}"] @ h + params[f"b_{g}"] for g in GATES}
    i, f, o = sigmoid(pre["i"]), sigmoid(pre["f"]), sigmoid(pre["o"])
    g = np.tanh(pre["c"])
    c_new = f * c + i * g
    assert c_new.shape == (H,)
    return o * np.tanh(c_new), c_new


def softmax_head(z, weight, bias):
    return softmax(np.asarray(weight) @ np.asarray(z) + np.asarray(bias))
