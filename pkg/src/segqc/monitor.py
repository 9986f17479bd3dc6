"""Alert flags, correlation statistics and challenge-style model ranking."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import CoverageError, JoinError, UndefinedCorrelationError
from .metrics import StructureScore

OK, SUSPICIOUS, ERRONEOUS = "ok", "suspicious", "erroneous"
FLAGS = (OK, SUSPICIOUS, ERRONEOUS)
PHASES = ("ED", "ES")
RECORD_SCHEMA = "segqc.quality_record/1"


@dataclass(frozen=True)
class Thresholds:
    hd_max: float = 50.0
    dsc_min: float = 0.5


def _iter_scores(scores):
    return scores.values() if isinstance(scores, dict) else scores


def flag(scores, thresholds: Thresholds = Thresholds()) -> str:
    """Classify one segmentation from its per-structure scores.

    Any structure at exactly ``(hd, dsc) = (0, 0)`` makes the case erroneous;
    otherwise any structure beyond a threshold makes it suspicious.
    """
    scores = list(_iter_scores(scores))
    if any(s.hd == 0.0 and s.dsc == 0.0 for s in scores):
        return ERRONEOUS
    if any(s.hd > thresholds.hd_max or s.dsc < thresholds.dsc_min for s in scores):
        return SUSPICIOUS
    return OK


@dataclass
class QualityRecord:
    case_id: str
    model_id: str
    phase: str
    scores: dict  # structure name -> StructureScore
    flag: str = OK

    @classmethod
    def from_scores(cls, case_id, model_id, phase, scores, thresholds=Thresholds()):
        scores = {s.name: s for s in _iter_scores(scores)}
        return cls(case_id, model_id, phase, scores, flag(scores, thresholds))

    def reflag(self, thresholds=Thresholds()) -> str:
        return flag(self.scores, thresholds)

    @property
    def key(self):
        return (self.case_id, self.model_id, self.phase)

    def to_dict(self):
        return {
            "schema": RECORD_SCHEMA,
            "case_id": self.case_id,
            "model_id": self.model_id,
            "phase": self.phase,
            "scores": {k: v.to_dict() for k, v in self.scores.items()},
            "flag": self.flag,
        }

    @classmethod
    def from_dict(cls, d):
        scores = {k: StructureScore.from_dict(v) for k, v in d["scores"].items()}
        return cls(str(d["case_id"]), str(d["model_id"]), str(d["phase"]), scores, d.get("flag", OK))


@dataclass(frozen=True)
class ReferenceScore:
    """A real (ground-truth based) score for one structure of one case."""

    case_id: str
    model_id: str
    phase: str
    structure: str
    dsc: float
    hd: float


def pearson_r(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two 1-D series of equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant series")
    r = float(dx @ dy) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


def spearman_rs(x, y) -> float:
    """Pearson correlation of average ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need two 1-D series of equal length, got {x.shape} and {y.shape}")
    return pearson_r(rankdata(x), rankdata(y))


@dataclass
class RankingTable:
    structure: str
    phase: str
    models: list  # ordered best (lowest mean pHD) first
    mean_phd: dict
    ranks: dict
    reference_mean: dict = field(default_factory=dict)
    r_s: float | None = None

    def rows(self):
        for m in self.models:
            yield m, self.structure, self.phase, self.mean_phd[m], self.ranks[m]


def _rank(means: dict):
    order = sorted(means, key=lambda m: (means[m], m))
    return order, {m: i + 1 for i, m in enumerate(order)}


def simulate_ranking(records, reference=None, structures=None, phases=None):
    """Rank models by mean pHD for every (structure, phase) group.

    With ``reference`` (an iterable of :class:`ReferenceScore`), models are
    also averaged on the real HD and ``r_s`` compares the two orderings.
    """
    grouped = defaultdict(lambda: defaultdict(dict))  # (structure, phase) -> model -> case -> hd
    for rec in records:
        for name, s in rec.scores.items():
            grouped[(name, rec.phase)][rec.model_id][rec.case_id] = s.hd
    ref = defaultdict(lambda: defaultdict(list))
    if reference is not None:
        for r in reference:
            ref[(r.structure, r.phase)][r.model_id].append(r.hd)

    tables = []
    for (structure, phase) in sorted(grouped):
        if structures is not None and structure not in structures:
            continue
        if phases is not None and phase not in phases:
            continue
        per_model = grouped[(structure, phase)]
        all_cases = set().union(*(set(c) for c in per_model.values()))
        missing = {m: sorted(all_cases - set(c)) for m, c in per_model.items() if set(c) != all_cases}
        if missing:
            detail = "; ".join(f"{m}: {', '.join(cs)}" for m, cs in sorted(missing.items()))
            raise CoverageError(f"{structure}/{phase}: models miss cases ({detail})")
        means = {m: float(np.mean([c[k] for k in sorted(c)])) for m, c in per_model.items()}
        order, ranks = _rank(means)
        table = RankingTable(structure, phase, order, means, ranks)
        if reference is not None:
            group_ref = ref.get((structure, phase), {})
            absent = [m for m in order if m not in group_ref]
            if absent:
                raise CoverageError(f"{structure}/{phase}: no reference scores for {', '.join(absent)}")
            table.reference_mean = {m: float(np.mean(group_ref[m])) for m in order}
            try:
                table.r_s = spearman_rs([means[m] for m in order], [table.reference_mean[m] for m in order])
            except UndefinedCorrelationError:
                table.r_s = float("nan")  # a single model, or all models tied
        tables.append(table)
    return tables


@dataclass
class ScatterSeries:
    structure: str
    keys: list
    real_dsc: np.ndarray
    pseudo_dsc: np.ndarray
    real_hd: np.ndarray
    pseudo_hd: np.ndarray
    r_dsc: float
    r_hd: float


def _safe_r(x, y):
    try:
        return pearson_r(x, y)
    except UndefinedCorrelationError:
        return float("nan")


def scatter_export(records, reference):
    """Aligned (real, pseudo) pairs per structure with their Pearson r."""
    pseudo = {}
    for rec in records:
        for name, s in rec.scores.items():
            pseudo[(rec.case_id, rec.model_id, rec.phase, name)] = s
    real = {(r.case_id, r.model_id, r.phase, r.structure): r for r in reference}
    only_pseudo = sorted(set(pseudo) - set(real))
    only_real = sorted(set(real) - set(pseudo))
    if only_pseudo or only_real:
        def fmt(keys):
            shown = ", ".join("/".join(k) for k in keys[:10])
            return shown + (f" (+{len(keys) - 10} more)" if len(keys) > 10 else "")
        parts = []
        if only_pseudo:
            parts.append(f"records without reference: {fmt(only_pseudo)}")
        if only_real:
            parts.append(f"reference without records: {fmt(only_real)}")
        raise JoinError("; ".join(parts))
    out = {}
    for structure in sorted({k[3] for k in pseudo}):
        keys = sorted(k for k in pseudo if k[3] == structure)
        rd = np.array([real[k].dsc for k in keys])
        pd = np.array([pseudo[k].dsc for k in keys])
        rh = np.array([real[k].hd for k in keys])
        ph = np.array([pseudo[k].hd for k in keys])
        out[structure] = ScatterSeries(structure, [k[:3] for k in keys], rd, pd, rh, ph,
                                       _safe_r(rd, pd), _safe_r(rh, ph))
    return out
