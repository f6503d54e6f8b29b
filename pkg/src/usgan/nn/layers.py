"""Layer primitives with explicit forward/backward passes.

Each layer owns its parameter arrays and accumulates gradients into
``grads`` during ``backward``. Forward passes cache whatever the backward
pass needs; training mode additionally updates batch-norm running stats.
"""

from __future__ import annotations

import numpy as np

from .kernels import conv2d_backward, conv2d_forward, conv2d_forward_cached

WEIGHT_STD = 0.02
BN_MOMENTUM = 0.99
BN_EPS = 1e-5


class Layer:
    """Base: parameterless layers inherit as-is."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def zero_grads(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def forward(self, x: np.ndarray, train: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @property
    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.params = {
            "w": rng.normal(0.0, WEIGHT_STD, size=(n_in, n_out)).astype(dtype),
            "b": np.zeros(n_out, dtype=dtype),
        }
        self.zero_grads()

    def forward(self, x, train):
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        self.grads["w"] += self._x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["w"].T


class Conv2d(Layer):
    def __init__(self, c_in, c_out, kernel, rng, stride=1, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.pad = kernel // 2
        self.params = {
            "w": rng.normal(0.0, WEIGHT_STD, size=(c_out, c_in, kernel, kernel)).astype(dtype),
            "b": np.zeros(c_out, dtype=dtype),
        }
        self.zero_grads()

    def forward(self, x, train):
        self._x = x
        if train:
            y, self._cols = conv2d_forward_cached(x, self.params["w"], self.stride, self.pad)
        else:
            self._cols = None
            y = conv2d_forward(x, self.params["w"], self.stride, self.pad)
        return y + self.params["b"][None, :, None, None]

    def backward(self, dy):
        dx, dw = conv2d_backward(
            self._x, self.params["w"], dy, self.stride, self.pad, cols=self._cols
        )
        self._cols = None
        self.grads["w"] += dw
        self.grads["b"] += dy.sum(axis=(0, 2, 3))
        return dx


class ConvTranspose2d(Layer):
    """Stride-2 transposed convolution realizing exact size doubling.

    Implemented as zero-dilation of the input followed by a stride-1
    convolution with the spatially flipped, channel-swapped kernel
    (kernel 3, padding 1, output padding 1).
    """

    def __init__(self, c_in, c_out, kernel, rng, dtype=np.float32):
        super().__init__()
        if kernel != 3:
            raise ValueError("only 3x3 transposed kernels are supported")
        self.kernel = kernel
        self.params = {
            "w": rng.normal(0.0, WEIGHT_STD, size=(c_in, c_out, kernel, kernel)).astype(dtype),
            "b": np.zeros(c_out, dtype=dtype),
        }
        self.zero_grads()

    def _dilate(self, x):
        n, c, h, w = x.shape
        xd = np.zeros((n, c, 2 * h, 2 * w), dtype=x.dtype)
        xd[:, :, ::2, ::2] = x
        return xd

    def forward(self, x, train):
        # dilated size 2H x 2W (includes output padding 1), conv pad K-1-p = 1
        self._xd = self._dilate(x)
        wt = np.ascontiguousarray(self.params["w"][:, :, ::-1, ::-1].swapaxes(0, 1))
        if train:
            y, self._cols = conv2d_forward_cached(self._xd, wt, 1, 1)
        else:
            self._cols = None
            y = conv2d_forward(self._xd, wt, 1, 1)
        return y + self.params["b"][None, :, None, None]

    def backward(self, dy):
        wt = np.ascontiguousarray(self.params["w"][:, :, ::-1, ::-1].swapaxes(0, 1))
        dxd, dwt = conv2d_backward(self._xd, wt, dy, 1, 1, cols=self._cols)
        self._cols = None
        self.grads["w"] += np.ascontiguousarray(dwt.swapaxes(0, 1)[:, :, ::-1, ::-1])
        self.grads["b"] += dy.sum(axis=(0, 2, 3))
        return dxd[:, :, ::2, ::2]


class BatchNorm2d(Layer):
    def __init__(self, c, dtype=np.float32):
        super().__init__()
        self.params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        self.running_mean = np.zeros(c, dtype=dtype)
        self.running_var = np.ones(c, dtype=dtype)
        self.zero_grads()

    def forward(self, x, train):
        if train:
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            self.running_mean = (BN_MOMENTUM * self.running_mean + (1 - BN_MOMENTUM) * mean).astype(
                x.dtype
            )
            self.running_var = (BN_MOMENTUM * self.running_var + (1 - BN_MOMENTUM) * var).astype(
                x.dtype
            )
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (x - mean[None, :, None, None]) * inv[None, :, None, None]
        self._train = train
        self._xhat = xhat
        self._inv = inv
        return self.params["gamma"][None, :, None, None] * xhat + self.params["beta"][
            None, :, None, None
        ]

    def backward(self, dy):
        g = self.params["gamma"]
        self.grads["gamma"] += (dy * self._xhat).sum(axis=(0, 2, 3))
        self.grads["beta"] += dy.sum(axis=(0, 2, 3))
        scale = (g * self._inv)[None, :, None, None]
        if not self._train:
            return dy * scale
        m = dy.shape[0] * dy.shape[2] * dy.shape[3]
        mean_dy = dy.mean(axis=(0, 2, 3))[None, :, None, None]
        mean_dy_xhat = (dy * self._xhat).mean(axis=(0, 2, 3))[None, :, None, None]
        return scale * (dy - mean_dy - self._xhat * mean_dy_xhat)


class ReLU(Layer):
    def forward(self, x, train):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, dy):
        return np.where(self._mask, dy, dy.dtype.type(0))


class LeakyReLU(Layer):
    def __init__(self, slope=0.2):
        super().__init__()
        self.slope = slope

    def forward(self, x, train):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(self.slope) * x)

    def backward(self, dy):
        return np.where(self._mask, dy, dy.dtype.type(self.slope) * dy)


class Tanh(Layer):
    def forward(self, x, train):
        self._y = np.tanh(x)
        return self._y

    def backward(self, dy):
        return dy * (1.0 - self._y * self._y)


class Sequential(Layer):
    def __init__(self, layers: list[Layer]):
        super().__init__()
        self.layers = layers

    def forward(self, x, train):
        for l in self.layers:
            x = l.forward(x, train)
        return x

    def backward(self, dy):
        for l in reversed(self.layers):
            dy = l.backward(dy)
        return dy

    @property
    def n_params(self):
        return sum(l.n_params for l in self.layers)


class ResBlock(Layer):
    """Identity-shortcut residual unit: two conv+BN+LReLU, channels unchanged."""

    def __init__(self, c, kernel, rng, slope=0.2, dtype=np.float32):
        super().__init__()
        self.body = Sequential(
            [
                Conv2d(c, c, kernel, rng, dtype=dtype),
                BatchNorm2d(c, dtype=dtype),
                LeakyReLU(slope),
                Conv2d(c, c, kernel, rng, dtype=dtype),
                BatchNorm2d(c, dtype=dtype),
                LeakyReLU(slope),
            ]
        )

    def forward(self, x, train):
        return x + self.body.forward(x, train)

    def backward(self, dy):
        return dy + self.body.backward(dy)

    @property
    def n_params(self):
        return self.body.n_params


def iter_layers(layer: Layer):
    """Depth-first iteration over primitive layers."""
    if isinstance(layer, Sequential):
        for l in layer.layers:
            yield from iter_layers(l)
    elif isinstance(layer, ResBlock):
        yield from iter_layers(layer.body)
    else:
        yield layer
