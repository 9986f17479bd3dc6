"""Label masks, the one-hot codec and the fixed-size canvas geometry.

Masks are 2-D grids of class indices. Class 0 is always background; the
canonical cardiac order is ``background, RV, MYO, LV``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidMaskError, ShapeMismatchError

__all__ = [
    "ClassSet",
    "CARDIAC_CLASSES",
    "LabelMask",
    "encode_one_hot",
    "decode_argmax",
    "center_fit",
]


@dataclass(frozen=True)
class ClassSet:
    names: tuple[str, ...] = ("background", "RV", "MYO", "LV")

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        if len(self.names) < 2:
            raise ValueError("a class set needs background plus at least one structure")
        if len(set(self.names)) != len(self.names):
            raise ValueError(f"duplicate class names in {self.names}")

    @property
    def count(self) -> int:
        return len(self.names)

    @property
    def foreground(self) -> tuple[int, ...]:
        return tuple(range(1, self.count))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown class {name!r}; known: {', '.join(self.names)}") from None


CARDIAC_CLASSES = ClassSet()


@dataclass(frozen=True, eq=False)
class LabelMask:
    """An ``H x W`` grid of class indices with physical pixel spacing (mm)."""

    labels: np.ndarray
    spacing: tuple[float, float] = (1.0, 1.0)
    classes: ClassSet = field(default=CARDIAC_CLASSES)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.size == 0:
            raise InvalidMaskError(f"mask must be a non-empty 2-D grid, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(labels == np.round(labels)):
                raise InvalidMaskError("mask labels must be integers")
        elif labels.dtype.kind not in "iub":
            raise InvalidMaskError(f"unsupported label dtype {labels.dtype}")
        if labels.min() < 0 or labels.max() >= self.classes.count:
            raise InvalidMaskError(
                f"labels must lie in 0..{self.classes.count - 1}, "
                f"found range {labels.min()}..{labels.max()}"
            )
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 2 or not all(s > 0 for s in spacing):
            raise InvalidMaskError(f"spacing must be two positive numbers, got {self.spacing}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", spacing)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    def class_pixels(self, c: int) -> np.ndarray:
        return self.labels == c

    def with_labels(self, labels) -> "LabelMask":
        return LabelMask(labels, self.spacing, self.classes)

    def __eq__(self, other):
        if not isinstance(other, LabelMask):
            return NotImplemented
        return (
            self.spacing == other.spacing
            and self.classes == other.classes
            and np.array_equal(self.labels, other.labels)
        )

    def __repr__(self):
        return f"LabelMask({self.height}x{self.width}, spacing={self.spacing})"


def encode_one_hot(mask: LabelMask, classes: ClassSet | None = None, dtype=np.float32) -> np.ndarray:
    """Return a ``C x H x W`` array with a single 1 per pixel."""
    classes = classes or mask.classes
    labels = mask.labels
    if labels.max() >= classes.count:
        raise InvalidMaskError(f"label {labels.max()} out of range for {classes.count} classes")
    return (labels[None, :, :] == np.arange(classes.count)[:, None, None]).astype(dtype)


def decode_argmax(grid: np.ndarray, spacing=(1.0, 1.0), classes: ClassSet | None = None) -> LabelMask:
    """Hard decision over the channel axis of a ``C x H x W`` grid.

    ``np.argmax`` returns the first maximum, so ties go to the lowest index.
    """
    grid = np.asarray(grid)
    if grid.ndim != 3 or grid.shape[0] < 1:
        raise ShapeMismatchError(f"expected a C x H x W grid, got shape {grid.shape}")
    if classes is None:
        classes = CARDIAC_CLASSES if grid.shape[0] == CARDIAC_CLASSES.count else ClassSet(
            ("background",) + tuple(f"class{i}" for i in range(1, max(grid.shape[0], 2)))
        )
    return LabelMask(np.argmax(grid, axis=0), spacing, classes)


def _fit_axis(size: int, target: int):
    """Source and destination slices that center ``size`` into ``target``."""
    if size <= target:
        off = (target - size) // 2
        return slice(0, size), slice(off, off + size)
    off = (size - target) // 2
    return slice(off, off + target), slice(0, target)


def center_fit(mask: LabelMask, target: tuple[int, int] = (256, 256)) -> LabelMask:
    """Place ``mask`` in the middle of a black canvas, cropping what overflows."""
    th, tw = target
    src_r, dst_r = _fit_axis(mask.height, th)
    src_c, dst_c = _fit_axis(mask.width, tw)
    out = np.zeros((th, tw), dtype=np.uint8)
    out[dst_r, dst_c] = mask.labels[src_r, src_c]
    return mask.with_labels(out)
