"""Reconstruction losses on ``(N, C, H, W)`` probability maps.

Both return ``(loss, grad)`` where ``grad`` is d(loss)/d(pred).
"""
from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatchError


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction shape {pred.shape} != target shape {target.shape}")


def mse_loss(pred, target):
    _check(pred, target)
    diff = pred - target
    loss = float(np.mean(diff * diff, dtype=np.float64))
    grad = diff * pred.dtype.type(2.0 / diff.size)
    return loss, grad


def generalized_dice_loss(pred, target, include_background=True, eps=1e-6):
    """Generalized Dice loss with inverse squared-volume class weights.

    ``1 - 2 * sum_l w_l sum_n r_ln p_ln / sum_l w_l sum_n (r_ln + p_ln)``
    with ``w_l = 1 / (sum_n r_ln)^2``. Sums over ``n`` run over the whole
    batch. ``eps`` regularizes both the weights and the global denominator,
    so a class absent from the target gets a large but finite weight.
    """
    _check(pred, target)
    first = 0 if include_background else 1
    p = pred[:, first:].astype(np.float64)
    r = target[:, first:].astype(np.float64)
    axes = (0, 2, 3)
    vol = r.sum(axis=axes)
    w = 1.0 / (vol * vol + eps)
    inter = (r * p).sum(axis=axes)
    total = (r + p).sum(axis=axes)
    num = float((w * inter).sum())
    den = float((w * total).sum()) + eps
    loss = 1.0 - 2.0 * num / den

    wb = w[None, :, None, None]
    g = -2.0 * wb * (r * den - num) / (den * den)
    grad = np.zeros_like(pred)
    grad[:, first:] = g.astype(pred.dtype)
    return loss, grad
