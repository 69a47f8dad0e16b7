"""Layer kernels with hand-written backward passes.

Every layer works on float64 batches (batch axis first).  Image tensors are
channels-first ``(N, C, H, W)``.  A layer is stateless: parameters and
running statistics live in dicts owned by the model, so the same layer
object can be evaluated against perturbed parameters (gradient checking)
without side effects.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

ACTIVATIONS = ("tanh", "swish", "relu", "linear")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"
    l2 = 0.0

    def init(self, in_shape, rng):
        """Return ``(params, state, out_shape)`` for a per-sample input shape."""
        return {}, {}, tuple(in_shape)

    def forward(self, params, state, x, train, rng):
        """Return ``(y, cache, new_state)``; ``new_state`` is None if unchanged."""
        raise NotImplementedError

    def backward(self, params, cache, dy):
        """Return ``(dx, grads)``."""
        raise NotImplementedError


class Dense(Layer):
    kind = "dense"

    def __init__(self, units: int, l2: float = 0.0):
        if units < 1:
            raise ValueError("dense units must be >= 1")
        if l2 < 0:
            raise ValueError("l2 must be nonnegative")
        self.units = units
        self.l2 = l2

    def init(self, in_shape, rng):
        if len(in_shape) != 1:
            raise ValueError(f"dense layer expects flat input, got shape {in_shape}")
        fan_in = in_shape[0]
        params = {"W": glorot_uniform(rng, fan_in, self.units, (fan_in, self.units)), "b": np.zeros(self.units)}
        return params, {}, (self.units,)

    def forward(self, params, state, x, train, rng):
        return x @ params["W"] + params["b"], x, None

    def backward(self, params, cache, dy):
        x = cache
        return dy @ params["W"].T, {"W": x.T @ dy, "b": dy.sum(axis=0)}


class Conv2D(Layer):
    """Valid-padding, stride-1 convolution (cross-correlation)."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel: int = 3, l2: float = 0.0):
        if kernel < 1 or kernel % 2 == 0:
            raise ValueError(f"conv kernel must be odd-sized, got {kernel}")
        if l2 < 0:
            raise ValueError("l2 must be nonnegative")
        self.filters = filters
        self.kernel = kernel
        self.l2 = l2

    def init(self, in_shape, rng):
        if len(in_shape) != 3:
            raise ValueError(f"conv2d expects (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        k = self.kernel
        if h < k or w < k:
            raise ValueError(f"input {h}x{w} smaller than kernel {k}x{k}")
        params = {
            "W": glorot_uniform(rng, c * k * k, self.filters * k * k, (self.filters, c, k, k)),
            "b": np.zeros(self.filters),
        }
        return params, {}, (self.filters, h - k + 1, w - k + 1)

    def forward(self, params, state, x, train, rng):
        W = params["W"]
        k = self.kernel
        n, c, h, w = x.shape
        ho, wo = h - k + 1, w - k + 1
        xt = np.ascontiguousarray(x.transpose(0, 2, 3, 1))  # N, H, W, C
        # im2col: one row per output pixel, columns ordered (c, ki, kj) like W
        cols = sliding_window_view(xt, (k, k), axis=(1, 2)).reshape(n * ho * wo, c * k * k)
        out = cols @ W.reshape(self.filters, -1).T + params["b"]
        out = out.reshape(n, ho, wo, self.filters).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(out), (cols, xt.shape), None

    def backward(self, params, cache, dy):
        cols, (n, h, w, c) = cache
        W = params["W"]
        k = self.kernel
        ho, wo = h - k + 1, w - k + 1
        dyf = np.ascontiguousarray(dy.transpose(0, 2, 3, 1)).reshape(-1, self.filters)
        grads = {"W": (dyf.T @ cols).reshape(W.shape), "b": dyf.sum(axis=0)}
        dcols = (dyf @ W.reshape(self.filters, -1)).reshape(n, ho, wo, c, k, k)
        dxt = np.zeros((n, h, w, c))
        for i in range(k):
            for j in range(k):
                dxt[:, i : i + ho, j : j + wo, :] += dcols[..., i, j]
        return dxt.transpose(0, 3, 1, 2), grads


class MaxPool2D(Layer):
    kind = "maxpool2d"

    def __init__(self, pool: int = 2):
        self.pool = pool

    def init(self, in_shape, rng):
        c, h, w = in_shape
        p = self.pool
        if h < p or w < p:
            raise ValueError(f"input {h}x{w} smaller than pool {p}x{p}")
        return {}, {}, (c, h // p, w // p)

    def forward(self, params, state, x, train, rng):
        p = self.pool
        n, c, h, w = x.shape
        ho, wo = h // p, w // p
        win = x[:, :, : ho * p, : wo * p].reshape(n, c, ho, p, wo, p)
        win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, p * p)
        idx = win.argmax(axis=-1)
        y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        return y, (x.shape, idx), None

    def backward(self, params, cache, dy):
        shape, idx = cache
        p = self.pool
        n, c, h, w = shape
        ho, wo = h // p, w // p
        win = np.zeros((n, c, ho, wo, p * p))
        np.put_along_axis(win, idx[..., None], dy[..., None], axis=-1)
        win = win.reshape(n, c, ho, wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * p, wo * p)
        dx = np.zeros(shape)
        dx[:, :, : ho * p, : wo * p] = win
        return dx, {}


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by 1 / keep probability."""

    kind = "dropout"

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, params, state, x, train, rng):
        if not train or self.rate == 0.0:
            return x, None, None
        keep = 1.0 - self.rate
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask, None

    def backward(self, params, cache, dy):
        return (dy if cache is None else dy * cache), {}


class BatchNorm(Layer):
    """Per-feature (or per-channel for 4-D input) batch normalization."""

    kind = "batchnorm"

    def __init__(self, momentum: float = 0.99, eps: float = 1e-3):
        self.momentum = momentum
        self.eps = eps

    def init(self, in_shape, rng):
        n = in_shape[0]
        params = {"gamma": np.ones(n), "beta": np.zeros(n)}
        state = {"mean": np.zeros(n), "var": np.ones(n)}
        return params, state, tuple(in_shape)

    @staticmethod
    def _axes_and_view(x):
        if x.ndim == 2:
            return (0,), (1, -1)
        return (0, 2, 3), (1, -1, 1, 1)

    def forward(self, params, state, x, train, rng):
        axes, view = self._axes_and_view(x)
        gamma = params["gamma"].reshape(view)
        beta = params["beta"].reshape(view)
        if not train:
            xhat = (x - state["mean"].reshape(view)) / np.sqrt(state["var"].reshape(view) + self.eps)
            return gamma * xhat + beta, None, None
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu.reshape(view)) * inv_std.reshape(view)
        m = self.momentum
        new_state = {
            "mean": m * state["mean"] + (1.0 - m) * mu,
            "var": m * state["var"] + (1.0 - m) * var,
        }
        return gamma * xhat + beta, (xhat, inv_std, axes, view), new_state

    def backward(self, params, cache, dy):
        xhat, inv_std, axes, view = cache
        count = dy.size // inv_std.size
        dgamma = (dy * xhat).sum(axis=axes)
        dbeta = dy.sum(axis=axes)
        dxhat = dy * params["gamma"].reshape(view)
        dx = (
            inv_std.reshape(view)
            / count
            * (
                count * dxhat
                - dxhat.sum(axis=axes).reshape(view)
                - xhat * (dxhat * xhat).sum(axis=axes).reshape(view)
            )
        )
        return dx, {"gamma": dgamma, "beta": dbeta}


class Flatten(Layer):
    kind = "flatten"

    def init(self, in_shape, rng):
        return {}, {}, (int(np.prod(in_shape)),)

    def forward(self, params, state, x, train, rng):
        return x.reshape(x.shape[0], -1), x.shape, None

    def backward(self, params, cache, dy):
        return dy.reshape(cache), {}


class Activation(Layer):
    kind = "activation"

    def __init__(self, name: str):
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")
        self.name = name

    def forward(self, params, state, x, train, rng):
        if self.name == "tanh":
            y = np.tanh(x)
        elif self.name == "swish":
            y = x * sigmoid(x)
        elif self.name == "relu":
            y = np.maximum(x, 0.0)
        else:
            y = x
        return y, (x, y), None

    def backward(self, params, cache, dy):
        x, y = cache
        if self.name == "tanh":
            return dy * (1.0 - y * y), {}
        if self.name == "swish":
            s = sigmoid(x)
            return dy * (s + x * s * (1.0 - s)), {}
        if self.name == "relu":
            return dy * (x > 0), {}
        return dy, {}
