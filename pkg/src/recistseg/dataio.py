"""Dataset storage: HU windowing, portable graymaps, annotation CSVs,
manifests, grouped splits, and run-config files."""

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ParseError, SchemaError
from .geometry import Point2, RecistPair
from .raster import build_supervision

log = logging.getLogger(__name__)

ANNOTATION_COLUMNS = [
    "slice_id", "lesion_id",
    "maj_ax", "maj_ay", "maj_bx", "maj_by",
    "min_ax", "min_ay", "min_bx", "min_by",
]


def window_hu(raw: np.ndarray, lo: float = 0.0, hi: float = 400.0) -> np.ndarray:
    """Clamp-and-rescale raw Hounsfield units into [0, 1]."""
    raw = np.asarray(raw, dtype=float)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


# ---------------------------------------------------------------------------
# Portable graymap (P5) round trips
# ---------------------------------------------------------------------------

def save_pgm(path, values: np.ndarray) -> None:
    """Write a uint8 or uint16 grid as binary PGM (16-bit is big-endian)."""
    arr = np.asarray(values)
    if arr.dtype == np.uint8:
        maxval = 255
        payload = arr.tobytes()
    elif arr.dtype == np.uint16:
        maxval = 65535
        payload = arr.astype(">u2").tobytes()
    else:
        raise ValueError(f"PGM supports uint8/uint16, got {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(payload)


def load_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", data)
    if m is None:
        raise ParseError(f"{path}: not a binary PGM header")
    w, h, maxval = (int(g) for g in m.groups())
    payload = data[m.end():]
    if maxval <= 255:
        arr = np.frombuffer(payload, dtype=np.uint8, count=h * w)
    else:
        arr = np.frombuffer(payload, dtype=">u2", count=h * w).astype(np.uint16)
    return arr.reshape(h, w)


def save_mask(path, mask: np.ndarray) -> None:
    save_pgm(path, (np.asarray(mask).astype(bool) * np.uint8(255)))


def load_mask(path) -> np.ndarray:
    return (load_pgm(path) > 0).astype(np.uint8)


def save_image(path, image: np.ndarray) -> None:
    """Store a [0, 1] float image as 16-bit PGM (lossless for 16-bit data)."""
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    save_pgm(path, np.round(arr * 65535.0).astype(np.uint16))


def load_image(path) -> np.ndarray:
    raw = load_pgm(path)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    return raw.astype(float) / scale


# ---------------------------------------------------------------------------
# Annotation CSV
# ---------------------------------------------------------------------------

def save_annotations(path, entries: list[tuple[str, int, RecistPair]]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(ANNOTATION_COLUMNS)
        for slice_id, lesion_id, r in entries:
            writer.writerow([
                slice_id, lesion_id,
                r.major_a.x, r.major_a.y, r.major_b.x, r.major_b.y,
                r.minor_a.x, r.minor_a.y, r.minor_b.x, r.minor_b.y,
            ])


def load_annotations(path) -> dict[str, list[tuple[int, RecistPair]]]:
    """Parse the annotation CSV into slice_id -> [(lesion_id, RecistPair)]."""
    out: dict[str, list[tuple[int, RecistPair]]] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: missing header") from None
        header = [h.strip() for h in header]
        for col in ANNOTATION_COLUMNS:
            if col not in header:
                raise SchemaError(f"{path}: missing column '{col}'")
        idx = {col: header.index(col) for col in ANNOTATION_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) < len(header):
                raise ParseError(f"{path}:{lineno}: expected {len(header)} fields, "
                                 f"got {len(row)}")
            try:
                slice_id = row[idx["slice_id"]].strip()
                lesion_id = int(row[idx["lesion_id"]])
                vals = {c: float(row[idx[c]]) for c in ANNOTATION_COLUMNS[2:]}
            except ValueError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            r = RecistPair(
                Point2(vals["maj_ax"], vals["maj_ay"]),
                Point2(vals["maj_bx"], vals["maj_by"]),
                Point2(vals["min_ax"], vals["min_ay"]),
                Point2(vals["min_bx"], vals["min_by"]),
            )
            out.setdefault(slice_id, []).append((lesion_id, r))
    return out


# ---------------------------------------------------------------------------
# Samples, manifests, splits
# ---------------------------------------------------------------------------

@dataclass
class SliceSample:
    """One training/evaluation slice with its annotations."""

    slice_id: str
    image: np.ndarray
    recists: list[RecistPair]
    gt: Optional[np.ndarray] = None
    source_id: str = ""
    # supervision masks, attached lazily by attach_supervision()
    q: Optional[np.ndarray] = field(default=None, repr=False)
    c: Optional[np.ndarray] = field(default=None, repr=False)
    ambiguous: Optional[np.ndarray] = field(default=None, repr=False)


def attach_supervision(samples: list[SliceSample]) -> list[SliceSample]:
    """Build per-slice Q/C-union masks and the ambiguous region in place."""
    for s in samples:
        h, w = s.image.shape
        s.q, s.c, s.ambiguous = build_supervision(s.recists, w, h)
    return samples


def save_manifest(path, records: list[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def load_manifest(path) -> list[dict]:
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}:{lineno}: {e}") from None
            if "slice_id" not in rec:
                raise SchemaError(f"{path}:{lineno}: record missing 'slice_id'")
            records.append(rec)
    return records


def split_records(records: list[dict], ratio: float = 0.8, seed: int = 0):
    """Deterministic grouped split: all slices of one source stay together."""
    sources = sorted({rec.get("source_id", rec["slice_id"]) for rec in records})
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(sources))
    n_train = int(round(ratio * len(sources)))
    train_sources = {sources[i] for i in order[:n_train]}
    train = [r for r in records if r.get("source_id", r["slice_id"]) in train_sources]
    test = [r for r in records if r.get("source_id", r["slice_id"]) not in train_sources]
    if not test:
        log.warning("split produced an empty test set (ratio=%.2f)", ratio)
    return train, test


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------

def save_dataset(root, samples: list[SliceSample]) -> None:
    """Lay a dataset out as images/, masks/, annotations.csv, manifest.jsonl."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(exist_ok=True)
    records = []
    annotations: list[tuple[str, int, RecistPair]] = []
    for s in samples:
        img_rel = f"images/{s.slice_id}.pgm"
        save_image(root / img_rel, s.image)
        rec = {"slice_id": s.slice_id, "source_id": s.source_id or s.slice_id,
               "image": img_rel}
        if s.gt is not None:
            mask_rel = f"masks/{s.slice_id}.pgm"
            save_mask(root / mask_rel, s.gt)
            rec["mask"] = mask_rel
        records.append(rec)
        for li, r in enumerate(s.recists):
            annotations.append((s.slice_id, li, r))
    save_annotations(root / "annotations.csv", annotations)
    save_manifest(root / "manifest.jsonl", records)


def load_dataset(root) -> list[SliceSample]:
    root = Path(root)
    records = load_manifest(root / "manifest.jsonl")
    ann_path = root / "annotations.csv"
    annotations = load_annotations(ann_path) if ann_path.exists() else {}
    samples = []
    for rec in records:
        image = load_image(root / rec["image"])
        gt = load_mask(root / rec["mask"]) if rec.get("mask") else None
        recists = [r for _, r in sorted(annotations.get(rec["slice_id"], []))]
        samples.append(SliceSample(
            slice_id=rec["slice_id"], image=image, recists=recists, gt=gt,
            source_id=rec.get("source_id", rec["slice_id"]),
        ))
    return samples


# ---------------------------------------------------------------------------
# Run-config files (flat key=value text)
# ---------------------------------------------------------------------------

def save_config(path, values: dict) -> None:
    with open(path, "w") as f:
        for key in sorted(values):
            f.write(f"{key}={values[key]}\n")


def load_config(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out
