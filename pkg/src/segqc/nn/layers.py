"""Layer objects wrapping the kernels in :mod:`segqc.nn.functional`.

Layers hold parameters but never activations: ``forward`` returns the cache
needed by ``backward`` instead of stashing it, so an eval-mode network can be
shared between threads.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError
from . import functional as F

LAYER_KINDS = ("conv", "conv_transpose", "batchnorm", "leaky_relu", "dropout", "softmax_channel")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 1
    stride: int = 1
    padding: int = 0
    negative_slope: float = 0.2
    drop_prob: float = 0.1
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigurationError(f"unknown layer kind {self.kind!r}")
        if self.stride < 1:
            raise ConfigurationError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigurationError(f"padding must be >= 0, got {self.padding}")
        if self.kernel < 1:
            raise ConfigurationError(f"kernel must be >= 1, got {self.kernel}")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ConfigurationError(f"dropout probability must lie in [0, 1), got {self.drop_prob}")

    def to_dict(self):
        return asdict(self)


class Layer:
    """Base layer. Parameter-free layers keep an empty ``params`` dict."""

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, grad_out, cache):
        """Return ``(grad_input, {param_name: grad})``."""
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def astype(self, dtype):
        self.params = {k: v.astype(dtype) for k, v in self.params.items()}
        self.buffers = {k: v.astype(dtype) for k, v in self.buffers.items()}
        return self

    def __repr__(self):
        s = self.spec
        if s.kind in ("conv", "conv_transpose"):
            return f"{type(self).__name__}({s.in_channels}->{s.out_channels}, k={s.kernel}, s={s.stride}, p={s.padding})"
        return f"{type(self).__name__}()"


class Conv2d(Layer):
    def __init__(self, spec, dtype=np.float32):
        super().__init__(spec)
        k = spec.kernel
        self.params = {
            "weight": np.zeros((spec.out_channels, spec.in_channels, k, k), dtype),
            "bias": np.zeros(spec.out_channels, dtype),
        }

    def forward(self, x, train=False, rng=None):
        s = self.spec
        return F.conv2d_forward(x, self.params["weight"], self.params["bias"], s.stride, s.padding)

    def backward(self, grad_out, cache):
        gx, gw, gb = F.conv2d_backward(grad_out, cache)
        return gx, {"weight": gw, "bias": gb}

    def output_shape(self, shape):
        n, c, h, w = shape
        s = self.spec
        if c != s.in_channels:
            raise ConfigurationError(f"conv expects {s.in_channels} channels, got {c}")
        return (n, s.out_channels,
                F.conv_output_size(h, s.kernel, s.stride, s.padding),
                F.conv_output_size(w, s.kernel, s.stride, s.padding))


class ConvTranspose2d(Layer):
    def __init__(self, spec, dtype=np.float32):
        super().__init__(spec)
        k = spec.kernel
        self.params = {
            "weight": np.zeros((spec.in_channels, spec.out_channels, k, k), dtype),
            "bias": np.zeros(spec.out_channels, dtype),
        }

    def forward(self, x, train=False, rng=None):
        s = self.spec
        return F.conv_transpose2d_forward(x, self.params["weight"], self.params["bias"], s.stride, s.padding)

    def backward(self, grad_out, cache):
        gx, gw, gb = F.conv_transpose2d_backward(grad_out, cache)
        return gx, {"weight": gw, "bias": gb}

    def output_shape(self, shape):
        n, c, h, w = shape
        s = self.spec
        if c != s.in_channels:
            raise ConfigurationError(f"transposed conv expects {s.in_channels} channels, got {c}")
        return (n, s.out_channels,
                F.conv_transpose_output_size(h, s.kernel, s.stride, s.padding),
                F.conv_transpose_output_size(w, s.kernel, s.stride, s.padding))


class BatchNorm2d(Layer):
    def __init__(self, spec, dtype=np.float32):
        super().__init__(spec)
        c = spec.in_channels
        self.params = {"weight": np.ones(c, dtype), "bias": np.zeros(c, dtype)}
        self.buffers = {"running_mean": np.zeros(c, dtype), "running_var": np.ones(c, dtype)}

    def forward(self, x, train=False, rng=None):
        return F.batchnorm_forward(
            x, self.params["weight"], self.params["bias"],
            self.buffers["running_mean"], self.buffers["running_var"],
            train, self.spec.momentum, self.spec.eps,
        )

    def backward(self, grad_out, cache):
        gx, gg, gb = F.batchnorm_backward(grad_out, cache)
        return gx, {"weight": gg, "bias": gb}


class LeakyReLU(Layer):
    def forward(self, x, train=False, rng=None):
        return F.leaky_relu_forward(x, self.spec.negative_slope)

    def backward(self, grad_out, cache):
        return F.leaky_relu_backward(grad_out, cache), {}


class Dropout(Layer):
    def forward(self, x, train=False, rng=None):
        return F.dropout_forward(x, self.spec.drop_prob, train, rng)

    def backward(self, grad_out, cache):
        return F.dropout_backward(grad_out, cache), {}


class SoftmaxChannel(Layer):
    def forward(self, x, train=False, rng=None):
        return F.softmax_channel_forward(x)

    def backward(self, grad_out, cache):
        return F.softmax_channel_backward(grad_out, cache), {}


_LAYER_TYPES = {
    "conv": Conv2d,
    "conv_transpose": ConvTranspose2d,
    "batchnorm": BatchNorm2d,
    "leaky_relu": LeakyReLU,
    "dropout": Dropout,
    "softmax_channel": SoftmaxChannel,
}


def make_layer(spec: LayerSpec, dtype=np.float32) -> Layer:
    cls = _LAYER_TYPES[spec.kind]
    if cls in (Conv2d, ConvTranspose2d, BatchNorm2d):
        return cls(spec, dtype)
    return cls(spec)


class Sequential:
    """A plain layer stack with explicit caches for backpropagation."""

    def __init__(self, layers):
        self.layers = list(layers)

    def __iter__(self):
        return iter(self.layers)

    def __len__(self):
        return len(self.layers)

    def forward(self, x, train=False, rng=None):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, train, rng)
            caches.append(cache)
        return x, caches

    def backward(self, grad_out, caches):
        """Return the input gradient and one gradient dict per layer."""
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            grad_out, grads[i] = self.layers[i].backward(grad_out, caches[i])
        return grad_out, grads

    def predict(self, x):
        """Eval-mode forward pass without retaining caches."""
        for layer in self.layers:
            x, _ = layer.forward(x, False, None)
        return x

    def output_shape(self, shape):
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def named_params(self):
        """``(name, array)`` pairs in declared layer order."""
        out = []
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                out.append((f"{i}.{k}", v))
        return out

    def named_buffers(self):
        out = []
        for i, layer in enumerate(self.layers):
            for k, v in layer.buffers.items():
                out.append((f"{i}.{k}", v))
        return out

    def astype(self, dtype):
        for layer in self.layers:
            layer.astype(dtype)
        return self


def he_normal_init(layers, rng: np.random.Generator):
    """He normal weights, zero biases, unit batchnorm scale.

    Fan-in follows the usual framework convention ``weight.shape[1] * k * k``
    for both convolution kinds.
    """
    for layer in layers:
        if isinstance(layer, (Conv2d, ConvTranspose2d)):
            w = layer.params["weight"]
            fan_in = w.shape[1] * w.shape[2] * w.shape[3]
            std = np.sqrt(2.0 / fan_in)
            layer.params["weight"] = (rng.standard_normal(w.shape) * std).astype(w.dtype)
            layer.params["bias"] = np.zeros_like(layer.params["bias"])
        elif isinstance(layer, BatchNorm2d):
            layer.params["weight"] = np.ones_like(layer.params["weight"])
            layer.params["bias"] = np.zeros_like(layer.params["bias"])
            layer.buffers["running_mean"] = np.zeros_like(layer.buffers["running_mean"])
            layer.buffers["running_var"] = np.ones_like(layer.buffers["running_var"])
    return layers
