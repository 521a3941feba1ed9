"""Layers with hand-written backward passes.

Every layer caches what it needs during ``forward`` and returns the input
gradient from ``backward``; parameter gradients land in ``layer.grads`` under
the same keys as ``layer.params``. Composite layers expose children so that
:meth:`Layer.state` yields flat ``"block.0.weight"``-style names.
"""
from __future__ import annotations

import numpy as np

from . import ops


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def children(self) -> list[tuple[str, "Layer"]]:
        return []

    def forward(self, x, *args):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def __call__(self, x, *args):
        return self.forward(x, *args)

    def state(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: v for k, v in self.params.items()}
        for name, child in self.children():
            out.update(child.state(f"{prefix}{name}."))
        return out

    def gradients(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {prefix + k: self.grads[k] for k in self.params}
        for name, child in self.children():
            out.update(child.gradients(f"{prefix}{name}."))
        return out

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, arr in self.state().items():
            if name not in tensors:
                raise KeyError(f"checkpoint is missing {name}")
            if tensors[name].shape != arr.shape:
                raise ValueError(f"{name}: expected shape {arr.shape}, got {tensors[name].shape}")
            arr[...] = tensors[name]

    def num_params(self) -> int:
        return sum(a.size for a in self.state().values())


def _init(rng, shape, fan_in: float, gain: float = 1.0) -> np.ndarray:
    return rng.normal(shape) * (gain / np.sqrt(fan_in))


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, rng, gain: float = 1.0):
        super().__init__()
        self.params["weight"] = _init(rng, (n_out, n_in), n_in, gain)
        self.params["bias"] = np.zeros(n_out)

    def forward(self, x):
        self._x = np.asarray(x, dtype=np.float64)
        return self._x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        w = self.params["weight"]
        g2 = grad.reshape(-1, w.shape[0])
        self.grads["weight"] = g2.T @ self._x.reshape(-1, w.shape[1])
        self.grads["bias"] = g2.sum(axis=0)
        return grad @ w


class Conv2d(Layer):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng, stride: int = 1,
                 padding: int | None = None, pad_mode: str = "circular",
                 gain: float = 1.0, zero_init: bool = False):
        super().__init__()
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.pad_mode = pad_mode
        shape = (c_out, c_in, kernel, kernel)
        self.params["weight"] = np.zeros(shape) if zero_init else _init(rng, shape, c_in * kernel**2, gain)
        self.params["bias"] = np.zeros(c_out)

    def forward(self, x):
        self._x = x
        return ops.conv2d(x, self.params["weight"], self.params["bias"],
                          self.stride, self.padding, self.pad_mode)

    def backward(self, grad):
        w = self.params["weight"]
        x4 = self._x if self._x.ndim == 4 else self._x[None]
        g4 = grad if grad.ndim == 4 else grad[None]
        self.grads["weight"] = ops.conv2d_weight_grad(x4, g4, w.shape[2:], self.stride, self.padding, self.pad_mode)
        self.grads["bias"] = g4.sum(axis=(0, 2, 3))
        gx = ops.conv2d_input_adjoint(g4, w, self.stride, self.padding, self.pad_mode, x4.shape[2:])
        return gx if self._x.ndim == 4 else gx[0]


class ConvTranspose2d(Layer):
    """Stride-``s`` deconvolution mapping ``[C_in, h, w]`` to ``[C_out, s*h, s*w]``."""

    def __init__(self, c_in: int, c_out: int, kernel: int, stride: int, rng,
                 padding: int | None = None, pad_mode: str = "circular", gain: float = 1.0):
        super().__init__()
        self.stride = stride
        self.padding = (kernel - stride) // 2 if padding is None else padding
        self.pad_mode = pad_mode
        fan_in = c_in * kernel**2 / stride**2
        self.params["weight"] = _init(rng, (c_in, c_out, kernel, kernel), fan_in, gain)
        self.params["bias"] = np.zeros(c_out)

    def forward(self, x):
        self._x = x
        return ops.conv_transpose2d(x, self.params["weight"], self.params["bias"],
                                    self.stride, self.padding, self.pad_mode)

    def backward(self, grad):
        w = self.params["weight"]
        x4 = self._x if self._x.ndim == 4 else self._x[None]
        g4 = grad if grad.ndim == 4 else grad[None]
        # the layer is the adjoint of a conv2d whose input is g and output is x
        self.grads["weight"] = ops.conv2d_weight_grad(g4, x4, w.shape[2:], self.stride, self.padding, self.pad_mode)
        self.grads["bias"] = g4.sum(axis=(0, 2, 3))
        gx = ops.conv2d(g4, w, None, self.stride, self.padding, self.pad_mode)
        return gx if self._x.ndim == 4 else gx[0]


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class SiLU(Layer):
    def forward(self, x):
        self._x = x
        self._s = sigmoid(x)
        return x * self._s

    def backward(self, grad):
        s = self._s
        return grad * (s + self._x * s * (1.0 - s))


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def children(self):
        return [(str(i), layer) for i, layer in enumerate(self.layers)]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad


class ResBlock(Layer):
    """``x + conv(silu(conv(x)))`` with the second conv zero-initialised."""

    def __init__(self, channels: int, rng, pad_mode: str = "circular"):
        super().__init__()
        self.conv1 = Conv2d(channels, channels, 3, rng, pad_mode=pad_mode)
        self.act = SiLU()
        self.conv2 = Conv2d(channels, channels, 3, rng, pad_mode=pad_mode, zero_init=True)

    def children(self):
        return [("conv1", self.conv1), ("conv2", self.conv2)]

    def forward(self, x):
        return x + self.conv2(self.act(self.conv1(x)))

    def backward(self, grad):
        return grad + self.conv1.backward(self.act.backward(self.conv2.backward(grad)))
