"""Stateless forward/backward kernels on ``(N, C, H, W)`` arrays.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Nothing here mutates shared
state except ``batchnorm_forward`` in train mode, which updates the running
statistics arrays it is handed.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigurationError, ShapeMismatchError


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - kernel
    if span < 0 or span % stride:
        raise ConfigurationError(
            f"input size {size} is incompatible with kernel={kernel}, stride={stride}, "
            f"padding={padding}: (size + 2p - k) / s + 1 is not a positive integer"
        )
    return span // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size - 1) * stride - 2 * padding + kernel
    if out <= 0:
        raise ConfigurationError(
            f"transposed conv of size {size} with kernel={kernel}, stride={stride}, "
            f"padding={padding} has non-positive output size {out}"
        )
    return out


def _im2col(x, kernel, stride, padding, out_h, out_w):
    """Strided view ``(N, C, Ho, Wo, k, k)`` of the padded input (no copy)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, : stride * (out_h - 1) + 1 : stride, : stride * (out_w - 1) + 1 : stride]


def _col2im(cols, stride, padding, out_h, out_w):
    """Adjoint of ``_im2col``: scatter-add ``(N, Ho, Wo, C, k, k)`` patches."""
    n, ho, wo, c, kernel, _ = cols.shape
    hp, wp = out_h + 2 * padding, out_w + 2 * padding
    acc = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N, C, k, k, Ho, Wo
    for i in range(kernel):
        for j in range(kernel):
            acc[:, :, i : i + stride * (ho - 1) + 1 : stride, j : j + stride * (wo - 1) + 1 : stride] += cols[:, :, i, j]
    if padding:
        acc = acc[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(acc)


def _check_input(x, channels, what):
    if x.ndim != 4:
        raise ShapeMismatchError(f"{what}: expected a 4-D (N, C, H, W) input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeMismatchError(f"{what}: expected {channels} input channels, got {x.shape[1]}")


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    """Cross-correlation. ``weight`` is ``(out, in, k, k)``."""
    out_c, in_c, kernel, kw = weight.shape
    if kernel != kw:
        raise ConfigurationError("only square kernels are supported")
    _check_input(x, in_c, "conv2d")
    ho = conv_output_size(x.shape[2], kernel, stride, padding)
    wo = conv_output_size(x.shape[3], kernel, stride, padding)
    cols = _im2col(x, kernel, stride, padding, ho, wo)
    out = np.tensordot(cols, weight, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, O
    out = out.transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias[None, :, None, None]
    cache = (x.shape, cols, weight, stride, padding)
    return np.ascontiguousarray(out), cache


def conv2d_backward(grad_out, cache):
    in_shape, cols, weight, stride, padding = cache
    grad_w = np.tensordot(grad_out, cols, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    gcols = np.tensordot(grad_out, weight, axes=([1], [0]))  # N, Ho, Wo, C, k, k
    grad_x = _col2im(gcols, stride, padding, in_shape[2], in_shape[3])
    return grad_x, grad_w, grad_b


def conv_transpose2d_forward(x, weight, bias, stride=1, padding=0):
    """Adjoint of :func:`conv2d_forward`. ``weight`` is ``(in, out, k, k)``."""
    in_c, out_c, kernel, kw = weight.shape
    if kernel != kw:
        raise ConfigurationError("only square kernels are supported")
    _check_input(x, in_c, "conv_transpose2d")
    ho = conv_transpose_output_size(x.shape[2], kernel, stride, padding)
    wo = conv_transpose_output_size(x.shape[3], kernel, stride, padding)
    gcols = np.tensordot(x, weight, axes=([1], [0]))  # N, H, W, O, k, k
    out = _col2im(gcols, stride, padding, ho, wo)
    if bias is not None:
        out += bias[None, :, None, None]
    cache = (x, weight, stride, padding, ho, wo)
    return out, cache


def conv_transpose2d_backward(grad_out, cache):
    x, weight, stride, padding, ho, wo = cache
    h, w = x.shape[2], x.shape[3]
    cols = _im2col(grad_out, weight.shape[2], stride, padding, h, w)  # N, O, H, W, k, k
    grad_x = np.tensordot(cols, weight, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    grad_w = np.tensordot(x, cols, axes=([0, 2, 3], [0, 2, 3]))
    grad_b = grad_out.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(grad_x), grad_w, grad_b


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, momentum=0.1, eps=1e-5):
    """Per-channel normalization over ``(N, H, W)``.

    In train mode the running statistics are updated in place with an
    exponential moving average (unbiased variance, as is conventional).
    """
    _check_input(x, gamma.shape[0], "batchnorm")
    if train:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        n = x.shape[0] * x.shape[2] * x.shape[3]
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = xhat * gamma[None, :, None, None] + beta[None, :, None, None]
    cache = (xhat, inv_std, gamma, train)
    return out.astype(x.dtype, copy=False), cache


def batchnorm_backward(grad_out, cache):
    xhat, inv_std, gamma, train = cache
    grad_gamma = (grad_out * xhat).sum(axis=(0, 2, 3))
    grad_beta = grad_out.sum(axis=(0, 2, 3))
    gxhat = grad_out * gamma[None, :, None, None]
    if train:
        mean_g = gxhat.mean(axis=(0, 2, 3), keepdims=True)
        mean_gx = (gxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
        grad_x = (gxhat - mean_g - xhat * mean_gx) * inv_std[None, :, None, None]
    else:
        grad_x = gxhat * inv_std[None, :, None, None]
    return grad_x.astype(grad_out.dtype, copy=False), grad_gamma, grad_beta


def leaky_relu_forward(x, negative_slope=0.2):
    positive = x >= 0
    return np.where(positive, x, x * negative_slope), (positive, negative_slope)


def leaky_relu_backward(grad_out, cache):
    positive, slope = cache
    return np.where(positive, grad_out, grad_out * slope)


def dropout_forward(x, p, train, rng=None):
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must lie in [0, 1), got {p}")
    if not train or p == 0.0:
        return x, None
    if rng is None:
        raise ConfigurationError("dropout in train mode needs a random generator")
    keep = (rng.random(x.shape) >= p).astype(x.dtype) / x.dtype.type(1.0 - p)
    return x * keep, keep


def dropout_backward(grad_out, cache):
    return grad_out if cache is None else grad_out * cache


def softmax_channel_forward(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    return s, s


def softmax_channel_backward(grad_out, s):
    return s * (grad_out - (grad_out * s).sum(axis=1, keepdims=True))
