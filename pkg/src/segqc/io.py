"""On-disk formats: PGM masks, JSON manifests, JSON-lines records and CSV tables.

Every writer goes through a temporary file and ``os.replace`` so readers
never observe a half-written artifact.
"""
from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .masks import CARDIAC_CLASSES, ClassSet, LabelMask
from .monitor import RECORD_SCHEMA, QualityRecord, ReferenceScore

MANIFEST_SCHEMA = 1
REFERENCE_COLUMNS = ["case_id", "model_id", "phase", "structure", "dsc", "hd"]
RANKING_COLUMNS = ["model", "structure", "phase", "mean_phd_mm", "rank"]
SCATTER_COLUMNS = ["case_id", "model_id", "phase", "structure", "real_dsc", "pseudo_dsc", "real_hd", "pseudo_hd"]


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


# -- PGM ---------------------------------------------------------------------

def encode_pgm(pixels: np.ndarray, comments=()) -> bytes:
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise ValueError("PGM images are 2-D")
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("PGM pixel values must fit in 8 bits")
    h, w = pixels.shape
    head = "P5\n" + "".join(f"# {c}\n" for c in comments) + f"{w} {h}\n255\n"
    return head.encode("ascii") + pixels.astype(np.uint8).tobytes()


def decode_pgm(data: bytes):
    """Return ``(pixels, comments)`` from binary 8-bit PGM bytes."""
    if data[:2] != b"P5":
        raise DataFormatError("not a binary PGM (P5) file")
    pos = 2
    tokens, comments = [], []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise DataFormatError("PGM header is truncated")
        if data[pos : pos + 1] == b"#":
            end = data.find(b"\n", pos)
            end = len(data) if end < 0 else end
            comments.append(data[pos + 1 : end].decode("ascii", "replace").strip())
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataFormatError(f"bad PGM header tokens {tokens}") from None
    if maxval > 255:
        raise DataFormatError("only 8-bit PGM files are supported")
    raster = data[pos : pos + w * h]
    if len(raster) != w * h:
        raise DataFormatError(f"PGM raster holds {len(raster)} bytes, expected {w * h}")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy(), comments


def save_mask(path, mask: LabelMask):
    comments = [f"segqc classes: {','.join(mask.classes.names)}",
                f"segqc spacing: {mask.spacing[0]!r} {mask.spacing[1]!r}"]
    atomic_write_bytes(path, encode_pgm(mask.labels, comments))


def load_mask(path, spacing=None, classes: ClassSet | None = None) -> LabelMask:
    """Read a mask; spacing and class order fall back to the file header."""
    try:
        pixels, comments = decode_pgm(Path(path).read_bytes())
    except FileNotFoundError:
        raise DataFormatError(f"mask file not found: {path}") from None
    header_spacing, header_classes = None, None
    for c in comments:
        if c.startswith("segqc classes:"):
            header_classes = ClassSet(tuple(c.split(":", 1)[1].strip().split(",")))
        elif c.startswith("segqc spacing:"):
            header_spacing = tuple(float(v) for v in c.split(":", 1)[1].split())
    classes = classes or header_classes or CARDIAC_CLASSES
    if header_classes is not None and header_classes != classes:
        raise DataFormatError(f"{path}: class order {header_classes.names} differs from {classes.names}")
    spacing = spacing or header_spacing or (1.0, 1.0)
    return LabelMask(pixels, spacing, classes)


def save_image(path, pixels):
    atomic_write_bytes(path, encode_pgm(pixels))


# -- manifests ---------------------------------------------------------------

@dataclass
class ManifestEntry:
    case_id: str
    phase: str
    mask: str
    spacing: tuple = (1.0, 1.0)
    model_id: str | None = None
    reference: str | None = None

    @property
    def key(self):
        return (self.case_id, self.phase, self.model_id)

    @property
    def stem(self):
        parts = [self.model_id] if self.model_id else []
        parts += [self.case_id, self.phase]
        return "_".join("".join(ch if ch.isalnum() or ch in "-." else "-" for ch in p) for p in parts)


@dataclass
class Manifest:
    entries: list = field(default_factory=list)
    classes: ClassSet = CARDIAC_CLASSES
    schema_version: int = MANIFEST_SCHEMA
    base_dir: Path = Path(".")

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.key in seen:
                raise DataFormatError(f"duplicate manifest entry for case {e.case_id} phase {e.phase} model {e.model_id}")
            seen.add(e.key)
            if len(e.spacing) != 2 or not all(s > 0 for s in e.spacing):
                raise DataFormatError(f"entry {e.case_id}: spacing must be two positive numbers")

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def load(self, entry: ManifestEntry) -> LabelMask:
        return load_mask(self.resolve(entry.mask), tuple(entry.spacing), self.classes)

    def to_dict(self):
        entries = []
        for e in self.entries:
            d = {"case_id": e.case_id, "phase": e.phase, "mask": str(e.mask), "spacing": list(e.spacing)}
            if e.model_id is not None:
                d["model_id"] = e.model_id
            if e.reference is not None:
                d["reference"] = str(e.reference)
            entries.append(d)
        return {"schema_version": self.schema_version, "classes": list(self.classes.names), "entries": entries}


def write_manifest(path, manifest: Manifest):
    atomic_write_text(path, json.dumps(manifest.to_dict(), indent=2) + "\n")


def read_manifest(path) -> Manifest:
    path = Path(path)
    try:
        d = json.loads(path.read_text())
    except FileNotFoundError:
        raise DataFormatError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    version = d.get("schema_version")
    if version != MANIFEST_SCHEMA:
        raise DataFormatError(f"{path}: manifest schema version {version} is not supported (want {MANIFEST_SCHEMA})")
    try:
        entries = [
            ManifestEntry(str(e["case_id"]), str(e["phase"]), e["mask"],
                          tuple(float(s) for s in e.get("spacing", (1.0, 1.0))),
                          e.get("model_id"), e.get("reference"))
            for e in d["entries"]
        ]
        classes = ClassSet(tuple(d.get("classes", CARDIAC_CLASSES.names)))
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"{path}: malformed manifest ({exc})") from None
    return Manifest(entries, classes, version, path.parent)


# -- records -----------------------------------------------------------------

def write_records(path, records):
    text = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in records)
    atomic_write_text(path, text)


def read_records(path) -> list[QualityRecord]:
    out = []
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise DataFormatError(f"records file not found: {path}") from None
    for n, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}:{n}: invalid JSON ({exc})") from None
        if d.get("schema") != RECORD_SCHEMA:
            raise DataFormatError(f"{path}:{n}: record schema {d.get('schema')!r} is not {RECORD_SCHEMA!r}")
        try:
            out.append(QualityRecord.from_dict(d))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"{path}:{n}: malformed record ({exc})") from None
    return out


# -- CSV tables --------------------------------------------------------------

def _csv_text(rows, header):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_reference(path, scores):
    rows = [[s.case_id, s.model_id, s.phase, s.structure, repr(float(s.dsc)), repr(float(s.hd))] for s in scores]
    atomic_write_text(path, _csv_text(rows, REFERENCE_COLUMNS))


def read_reference(path) -> list[ReferenceScore]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise DataFormatError(f"reference file not found: {path}") from None
    reader = csv.DictReader(io.StringIO(text))
    missing = set(REFERENCE_COLUMNS) - set(reader.fieldnames or [])
    if missing:
        raise DataFormatError(f"{path}: missing columns {', '.join(sorted(missing))}")
    out = []
    for n, row in enumerate(reader, 2):
        try:
            dsc = float(row["dsc"]) if row["dsc"] not in ("", None) else float("nan")
            out.append(ReferenceScore(row["case_id"], row["model_id"], row["phase"], row["structure"],
                                      dsc, float(row["hd"])))
        except ValueError as exc:
            raise DataFormatError(f"{path}:{n}: {exc}") from None
    return out


def ranking_csv(tables) -> str:
    """Ranking rows, followed per group by a ``#r_s`` metadata row when available."""
    rows = []
    for t in tables:
        for model, structure, phase, mean, rank in t.rows():
            rows.append([model, structure, phase, f"{mean:.6f}", rank])
        if t.r_s is not None:
            rows.append(["#r_s", t.structure, t.phase, f"{t.r_s:.12f}", ""])
    return _csv_text(rows, RANKING_COLUMNS)


def read_ranking_csv(path):
    """Parse a ranking table back into ``(rows, {(structure, phase): r_s})``."""
    reader = csv.DictReader(io.StringIO(Path(path).read_text()))
    rows, rs = [], {}
    for row in reader:
        if row["model"] == "#r_s":
            rs[(row["structure"], row["phase"])] = float(row["mean_phd_mm"])
        else:
            rows.append(row)
    return rows, rs


def scatter_csv(series) -> str:
    rows = []
    for structure, s in series.items():
        for k, rd, pd, rh, ph in zip(s.keys, s.real_dsc, s.pseudo_dsc, s.real_hd, s.pseudo_hd):
            rows.append([*k, structure, repr(float(rd)), repr(float(pd)), repr(float(rh)), repr(float(ph))])
        rows.append(["#r", "", "", structure, "", repr(s.r_dsc), "", repr(s.r_hd)])
    return _csv_text(rows, SCATTER_COLUMNS)
