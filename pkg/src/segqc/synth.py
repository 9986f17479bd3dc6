"""Synthetic short-axis cardiac masks and graded corruptions.

Each generated mask holds an LV disk wrapped in a MYO annulus, with an RV
crescent hugging the annulus from one side. Corruptions emulate the failure
modes of a segmentation model at a controllable severity.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, GenerationError
from .masks import CARDIAC_CLASSES, ClassSet, LabelMask

BG, RV, MYO, LV = 0, 1, 2, 3
MIN_SIZE = 24

CORRUPTION_KINDS = ("drop_structure", "erode", "dilate", "punch_holes", "swap_labels", "random_blobs")
_CROSS = ndimage.generate_binary_structure(2, 1)


def _disk(yy, xx, cy, cx, r):
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r


def synth_mask(size: int, rng: np.random.Generator, spacing=(1.0, 1.0)) -> LabelMask:
    if size < MIN_SIZE:
        raise GenerationError(f"size {size} is too small to fit the cardiac structures (min {MIN_SIZE})")
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r_lv = rng.uniform(0.08, 0.13) * size
    thick = max(2.0, rng.uniform(0.035, 0.06) * size)
    r_rv = rng.uniform(0.9, 1.25) * (r_lv + thick)
    angle = rng.uniform(0.75, 1.25) * np.pi  # RV sits on the image-left side
    c = (size - 1) / 2.0
    jitter = 0.06 * size
    cy = c + rng.uniform(-jitter, jitter)
    cx = c + 0.12 * size + rng.uniform(-jitter, jitter)
    dist = (r_lv + thick) * rng.uniform(0.75, 1.0) + 0.45 * r_rv
    ry, rx = cy + dist * np.sin(angle), cx + dist * np.cos(angle)

    outer = _disk(yy, xx, cy, cx, r_lv + thick)
    labels = np.zeros((size, size), dtype=np.uint8)
    rv = _disk(yy, xx, ry, rx, r_rv) & ~outer
    labels[rv] = RV
    labels[outer] = MYO
    labels[_disk(yy, xx, cy, cx, r_lv)] = LV
    # the annulus must not touch the border, else LV boundary pixels could miss MYO
    if outer[0].any() or outer[-1].any() or outer[:, 0].any() or outer[:, -1].any():
        raise GenerationError("structures do not fit inside the canvas")
    if not all((labels == k).any() for k in (RV, MYO, LV)):
        raise GenerationError("a structure vanished during generation")
    return LabelMask(labels, spacing, CARDIAC_CLASSES)


def synth_generate(n: int, size: int = 64, seed: int = 0, spacing=(1.0, 1.0)) -> list[LabelMask]:
    """``n`` reproducible masks of ``size x size``."""
    rng = np.random.default_rng(seed)
    return [synth_mask(size, rng, spacing) for _ in range(n)]


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int = 1
    target: int | None = LV  # None means every foreground class where meaningful
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ConfigurationError(f"unknown corruption {self.kind!r}; choose from {', '.join(CORRUPTION_KINDS)}")
        if self.severity < 0:
            raise ConfigurationError("severity must be >= 0")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - {"kind", "severity", "target", "seed"}
        if unknown:
            raise ConfigurationError(f"unknown corruption fields: {', '.join(sorted(unknown))}")
        return cls(**d)


def _targets(spec, classes: ClassSet):
    return classes.foreground if spec.target is None else (spec.target,)


def _erode(labels, c, k):
    region = labels == c
    # border_value=0 so structures touching the edge also shrink from there
    kept = ndimage.binary_erosion(region, _CROSS, iterations=k, border_value=0)
    labels[region & ~kept] = BG


def _dilate(labels, c, k):
    grown = ndimage.binary_dilation(labels == c, _CROSS, iterations=k)
    labels[grown] = c


def _random_points(mask, rng, n):
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return []
    pick = rng.integers(0, len(ys), n)
    return list(zip(ys[pick], xs[pick]))


def corrupt(mask: LabelMask, spec: CorruptionSpec) -> LabelMask:
    """Deterministic, severity-graded corruption. Severity 0 is the identity."""
    if spec.severity == 0:
        return mask
    labels = mask.labels.copy()
    rng = np.random.default_rng(spec.seed)
    classes = mask.classes
    h, w = labels.shape
    yy, xx = np.mgrid[0:h, 0:w]
    targets = _targets(spec, classes)
    for c in targets:
        if not 0 < c < classes.count:
            raise ConfigurationError(f"corruption target {c} is not a foreground class")
    if spec.kind == "drop_structure":
        for c in targets:
            labels[labels == c] = BG
    elif spec.kind == "erode":
        for c in targets:
            _erode(labels, c, spec.severity)
    elif spec.kind == "dilate":
        for c in targets:
            _dilate(labels, c, spec.severity)
    elif spec.kind == "punch_holes":
        radius = max(1.0, 0.03 * min(h, w))
        for c in targets:
            for cy, cx in _random_points(labels == c, rng, spec.severity):
                labels[_disk(yy, xx, cy, cx, radius) & (labels == c)] = BG
    elif spec.kind == "swap_labels":
        radius = max(2.0, 0.08 * min(h, w))
        fg = classes.foreground
        for c in targets:
            partner = fg[(fg.index(c) + 1) % len(fg)]
            for cy, cx in _random_points((labels == c) | (labels == partner), rng, spec.severity):
                patch = _disk(yy, xx, cy, cx, radius)
                a, b = patch & (labels == c), patch & (labels == partner)
                labels[a], labels[b] = partner, c
    elif spec.kind == "random_blobs":
        for c in targets:
            for _ in range(spec.severity):
                cy, cx = rng.integers(0, h), rng.integers(0, w)
                r = rng.uniform(0.03, 0.07) * min(h, w)
                labels[_disk(yy, xx, cy, cx, r)] = c
    return mask.with_labels(labels)


def corrupt_all(mask: LabelMask, specs) -> LabelMask:
    for spec in specs:
        mask = corrupt(mask, spec)
    return mask
