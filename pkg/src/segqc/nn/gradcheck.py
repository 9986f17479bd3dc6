"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, LeakyReLU, Sequential


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)
    probes: dict = field(default_factory=dict)
    kink_retries: int = 0  # probes whose step was shrunk to stay on one side of every LeakyReLU kink

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status} max relative error {self.max_error:.3e} (tolerance {self.tolerance:.0e})"]
        if self.kink_retries:
            lines[0] += f", {self.kink_retries} kink retries"
        for name, err in self.errors.items():
            lines.append(f"  {name:<24s} {err:.3e}  ({self.probes[name]} probes)")
        return "\n".join(lines)


def relative_error(analytic, numeric, floor=1e-8):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _probe_indices(size, max_probes, rng):
    if max_probes is None or size <= max_probes:
        return np.arange(size)
    return np.sort(rng.choice(size, max_probes, replace=False))


def _central_difference(f, arr, flat_idx, rel_step):
    idx = np.unravel_index(flat_idx, arr.shape)
    old = arr[idx]
    h = rel_step * max(1.0, abs(old))
    arr[idx] = old + h
    fp = f()
    arr[idx] = old - h
    fm = f()
    arr[idx] = old
    return (fp - fm) / (2.0 * h)


def _kink_safe_difference(f, arr, flat_idx, rel_step, base_region, retries):
    """Central difference that shrinks the step while a probe crosses a kink.

    ``f`` returns ``(value, region)`` where ``region`` identifies the sign
    pattern of every LeakyReLU input. Returns ``(estimate, shrinks)``.
    """
    idx = np.unravel_index(flat_idx, arr.shape)
    old = arr[idx]
    h = rel_step * max(1.0, abs(old))
    for attempt in range(retries + 1):
        arr[idx] = old + h
        fp, rp = f()
        arr[idx] = old - h
        fm, rm = f()
        arr[idx] = old
        if rp == base_region == rm or attempt == retries:
            return (fp - fm) / (2.0 * h), attempt
        h /= 10.0


def check_function_gradient(fn, x, tolerance=1e-4, *, rel_step=1e-5, max_probes=None, seed=0, name="input"):
    """Check a scalar function ``fn(x) -> (value, grad)`` against finite differences."""
    x = np.array(x, dtype=np.float64)
    _, grad = fn(x)
    grad = np.asarray(grad, dtype=np.float64).reshape(-1)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance)
    idx = _probe_indices(x.size, max_probes, rng)
    worst = 0.0
    for i in idx:
        num = _central_difference(lambda: fn(x)[0], x, i, rel_step)
        worst = max(worst, relative_error(grad[i], num))
    report.errors[name] = worst
    report.probes[name] = len(idx)
    return report


def _region(net, caches):
    digest = hashlib.sha1()
    for layer, cache in zip(net.layers, caches):
        if isinstance(layer, LeakyReLU):
            digest.update(np.packbits(cache[0]).tobytes())
    return digest.hexdigest()


def gradient_check(fragment, x, tolerance=1e-4, *, loss=None, train=True, seed=0,
                   rel_step=1e-5, max_probes=None, check_input=True, kink_retries=2):
    """Verify backpropagation through a layer, a layer list or a :class:`Sequential`.

    Runs on a float64 copy of ``fragment``; the original is untouched. The
    objective is ``loss(output)`` when given (a callable returning
    ``(value, grad)``), otherwise a fixed random projection of the output.
    Dropout masks are frozen by reseeding the generator on every evaluation.
    A probe whose step moves any LeakyReLU input across zero is repeated
    with a ten times smaller step, at most ``kink_retries`` times, since the
    derivative is only defined on one side of the kink. Failure is reported,
    never raised.
    """
    if isinstance(fragment, Layer):
        net = Sequential([fragment])
    elif isinstance(fragment, Sequential):
        net = Sequential(fragment.layers)
    else:
        net = Sequential(list(fragment))
    net = copy.deepcopy(net).astype(np.float64)
    x = np.array(x, dtype=np.float64)
    buffers = {k: v.copy() for k, v in net.named_buffers()}

    def restore_buffers():
        for layer_idx, layer in enumerate(net.layers):
            for k in layer.buffers:
                layer.buffers[k][...] = buffers[f"{layer_idx}.{k}"]

    projection = None
    if loss is None:
        out_shape = net.output_shape(x.shape)
        projection = np.random.default_rng(seed + 1).standard_normal(out_shape)

    def objective(with_grad=False):
        restore_buffers()
        out, caches = net.forward(x, train, np.random.default_rng(seed))
        if loss is None:
            value, g = float(np.sum(out * projection)), projection
        else:
            value, g = loss(out)
        if not with_grad:
            return value, _region(net, caches)
        gx, grads = net.backward(np.asarray(g, dtype=np.float64), caches)
        return value, gx, grads, _region(net, caches)

    _, grad_x, grads, base_region = objective(with_grad=True)
    rng = np.random.default_rng(seed + 2)
    report = GradCheckReport(tolerance)
    targets = []
    for i, layer in enumerate(net.layers):
        for k, arr in layer.params.items():
            targets.append((f"{i}.{type(layer).__name__}.{k}", arr, grads[i][k]))
    if check_input:
        targets.append(("input", x, grad_x))
    for name, arr, analytic in targets:
        analytic = np.asarray(analytic).reshape(-1)
        idx = _probe_indices(arr.size, max_probes, rng)
        worst = 0.0
        for j in idx:
            num, shrinks = _kink_safe_difference(objective, arr, j, rel_step, base_region, kink_retries)
            report.kink_retries += shrinks > 0
            worst = max(worst, relative_error(analytic[j], num))
        report.errors[name] = worst
        report.probes[name] = len(idx)
    restore_buffers()
    return report
