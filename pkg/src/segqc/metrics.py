"""Surrogate quality measures between a mask and its pseudo ground truth.

Scalar scores are Dice and Hausdorff per structure; the spatial score is a
pixel-wise disagreement map. A structure missing from either mask scores
``(dsc, hd) = (0, 0)``, which downstream flagging reads as an error.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ShapeMismatchError
from .masks import ClassSet, LabelMask


@dataclass(frozen=True)
class StructureScore:
    class_index: int
    name: str
    dsc: float
    hd: float
    empty_pred: bool = False
    empty_ref: bool = False

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["class_index"]), d["name"], float(d["dsc"]), float(d["hd"]),
                   bool(d.get("empty_pred", False)), bool(d.get("empty_ref", False)))


@dataclass(frozen=True, eq=False)
class InconsistencyMap:
    grid: np.ndarray  # uint8, 1 where the masks disagree
    count: int

    def to_image(self):
        """0/255 rendering for export."""
        return (self.grid * 255).astype(np.uint8)


def _check_pair(a: LabelMask, b: LabelMask, spacing=True):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if spacing and a.spacing != b.spacing:
        raise ShapeMismatchError(f"mask spacings differ: {a.spacing} vs {b.spacing}")


def dsc(a: LabelMask, b: LabelMask, c: int) -> float:
    _check_pair(a, b, spacing=False)
    A, B = a.labels == c, b.labels == c
    na, nb = int(A.sum()), int(B.sum())
    if na == 0 or nb == 0:
        return 0.0
    return 2.0 * int(np.count_nonzero(A & B)) / (na + nb)


def squared_edt(features: np.ndarray, spacing=(1.0, 1.0), block=32) -> np.ndarray:
    """Exact squared Euclidean distance from every pixel to the nearest feature.

    Two separable passes: nearest feature along each column (forward and
    backward scans), then an exact minimum over columns of
    ``(row_gap * sy)^2 + (col_gap * sx)^2``. Pixels of an empty feature set
    get ``inf``. With unit spacing every value is an exact integer.
    """
    f = np.asarray(features, dtype=bool)
    h, w = f.shape
    big = h + w + 1
    gap = np.empty((h, w), dtype=np.int64)
    run = np.full(w, big, dtype=np.int64)
    for i in range(h):
        run = np.where(f[i], 0, np.minimum(run + 1, big))
        gap[i] = run
    run = np.full(w, big, dtype=np.int64)
    for i in range(h - 1, -1, -1):
        run = np.where(f[i], 0, np.minimum(run + 1, big))
        gap[i] = np.minimum(gap[i], run)

    sy2 = float(spacing[0]) * float(spacing[0])
    sx2 = float(spacing[1]) * float(spacing[1])
    g = gap.astype(np.float64)
    col_term = (g * g) * sy2
    col_term[gap >= big] = np.inf
    j = np.arange(w, dtype=np.float64)
    dj = j[:, None] - j[None, :]
    row_term = (dj * dj) * sx2  # [target col, source col]
    out = np.empty((h, w), dtype=np.float64)
    for r0 in range(0, h, block):
        ct = col_term[r0 : r0 + block]
        out[r0 : r0 + block] = np.min(ct[:, None, :] + row_term[None, :, :], axis=2)
    return out


def directed_hausdorff_sq(A: np.ndarray, B: np.ndarray, spacing=(1.0, 1.0)) -> float:
    """Squared directed distance sup_{a in A} inf_{b in B} |a - b|."""
    return float(squared_edt(B, spacing)[A].max())


def hausdorff(a: LabelMask, b: LabelMask, c: int) -> float:
    """Symmetric Hausdorff distance in mm over the full pixel sets of class ``c``."""
    _check_pair(a, b)
    A, B = a.labels == c, b.labels == c
    if not A.any() or not B.any():
        return 0.0
    d2 = max(directed_hausdorff_sq(A, B, a.spacing), directed_hausdorff_sq(B, A, a.spacing))
    return float(np.sqrt(d2))


def structure_score(pred: LabelMask, ref: LabelMask, c: int) -> StructureScore:
    _check_pair(pred, ref)
    empty_pred = not (pred.labels == c).any()
    empty_ref = not (ref.labels == c).any()
    name = pred.classes.names[c]
    if empty_pred or empty_ref:
        return StructureScore(c, name, 0.0, 0.0, empty_pred, empty_ref)
    return StructureScore(c, name, dsc(pred, ref, c), hausdorff(pred, ref, c))


def pseudo_scores(pred: LabelMask, pgt: LabelMask, classes: ClassSet | None = None) -> list[StructureScore]:
    """Dice and Hausdorff of a prediction against its pseudo ground truth,
    one score per foreground class."""
    classes = classes or pred.classes
    return [structure_score(pred, pgt, c) for c in classes.foreground]


def xor_map(pred: LabelMask, pgt: LabelMask) -> InconsistencyMap:
    _check_pair(pred, pgt, spacing=False)
    grid = (pred.labels != pgt.labels).astype(np.uint8)
    return InconsistencyMap(grid, int(grid.sum()))
