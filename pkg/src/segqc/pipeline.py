"""Dataset-level steps: synthesize, train, reconstruct, score.

These are the functions the command line drives; calling them directly
gives identical artifacts.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DataFormatError
from .io import (
    Manifest,
    ManifestEntry,
    atomic_write_text,
    load_mask,
    save_image,
    save_mask,
    write_manifest,
    write_reference,
)
from .masks import CARDIAC_CLASSES, center_fit
from .metrics import pseudo_scores, structure_score, xor_map
from .model import ArchitectureConfig, TrainConfig, reconstruct, train
from .monitor import QualityRecord, ReferenceScore, Thresholds
from .synth import CorruptionSpec, corrupt_all, synth_generate

DEFAULT_MODEL_ID = "model"


def worker_count() -> int:
    """Worker cap from ``SEGQC_THREADS`` (default 1)."""
    raw = os.environ.get("SEGQC_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"SEGQC_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def _map(fn, items):
    workers = worker_count()
    if workers == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))  # preserves manifest order


def parse_corruptions(obj, classes=CARDIAC_CLASSES):
    items = obj if isinstance(obj, list) else [obj]
    specs = []
    for d in items:
        d = dict(d)
        if isinstance(d.get("target"), str):
            d["target"] = classes.index(d["target"])
        specs.append(CorruptionSpec.from_dict(d))
    return specs


def synthesize(out_dir, n, size, seed, corruptions=None, model_id=None, phase="ED", spacing=(1.0, 1.0)):
    """Write ``n`` synthetic masks plus a manifest into ``out_dir``.

    With ``corruptions`` the written masks are the corrupted ones, and a
    ``reference.csv`` holds their real scores against the clean masks.
    Per-case corruption seeds are offset by the case index.
    """
    out_dir = Path(out_dir)
    masks = synth_generate(n, size, seed, spacing)
    entries, reference = [], []
    for i, clean in enumerate(masks):
        case_id = f"case{i:03d}"
        mask = clean
        if corruptions:
            case_specs = [CorruptionSpec(s.kind, s.severity, s.target, s.seed + i) for s in corruptions]
            mask = corrupt_all(clean, case_specs)
        entry = ManifestEntry(case_id, phase, "", tuple(spacing), model_id,
                              "reference.csv" if corruptions else None)
        entry.mask = f"masks/{entry.stem}.pgm"
        save_mask(out_dir / entry.mask, mask)
        entries.append(entry)
        if corruptions:
            for c in clean.classes.foreground:
                s = structure_score(mask, clean, c)
                reference.append(ReferenceScore(case_id, model_id or DEFAULT_MODEL_ID, phase, s.name, s.dsc, s.hd))
    manifest = Manifest(entries, CARDIAC_CLASSES, base_dir=out_dir)
    write_manifest(out_dir / "manifest.json", manifest)
    if corruptions:
        write_reference(out_dir / "reference.csv", reference)
    return manifest


def load_normalized(manifest: Manifest, size: int):
    return [center_fit(manifest.load(e), (size, size)) for e in manifest.entries]


def train_from_manifest(manifest: Manifest, out_path, tcfg: TrainConfig, size=256, scale_factor=1.0,
                        weights="best", callback=None):
    if not manifest.entries:
        raise DataFormatError("manifest has no entries")
    masks = load_normalized(manifest, size)
    arch = (ArchitectureConfig(scale_factor=scale_factor) if size == 256
            else ArchitectureConfig.scaled(size, scale_factor=scale_factor))
    result = train(masks, tcfg, arch, callback)
    ckpt = result.checkpoint if weights == "best" else result.final
    save_checkpoint(ckpt, out_path)
    log_text = "".join(json.dumps(e.to_dict()) + "\n" for e in result.log)
    atomic_write_text(f"{out_path}.log.jsonl", log_text)
    return result


def generate_pgts(ckpt_path, manifest: Manifest, out_dir):
    """Reconstruct every manifest mask; writes ``<stem>.pgm`` per entry."""
    model = load_checkpoint(ckpt_path).to_model()
    size = model.config.input_size
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(entry):
        mask = center_fit(manifest.load(entry), (size, size))
        pgt, _ = reconstruct(model, mask)
        save_mask(out_dir / f"{entry.stem}.pgm", pgt)
        return pgt

    return _map(one, manifest.entries)


def score_manifest(manifest: Manifest, pgt_dir, thresholds=Thresholds(), maps_dir=None):
    """Pseudo scores of each manifest mask against its stored pGT."""
    pgt_dir = Path(pgt_dir)

    def one(entry):
        path = pgt_dir / f"{entry.stem}.pgm"
        if not path.exists():
            raise DataFormatError(f"no pseudo ground truth for {entry.stem} in {pgt_dir}")
        pgt = load_mask(path, tuple(entry.spacing), manifest.classes)
        pred = center_fit(manifest.load(entry), pgt.shape)
        if maps_dir is not None:
            save_image(Path(maps_dir) / f"{entry.stem}_xor.pgm", xor_map(pred, pgt).to_image())
        return QualityRecord.from_scores(entry.case_id, entry.model_id or DEFAULT_MODEL_ID, entry.phase,
                                         pseudo_scores(pred, pgt, manifest.classes), thresholds)

    return _map(one, manifest.entries)
