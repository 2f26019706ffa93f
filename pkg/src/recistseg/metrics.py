"""Segmentation metrics and the dual-mask quality report."""

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimMismatch, UndefinedMetric
from .geometry import boundary_pixels


def dice_jaccard(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Dice and Jaccard overlap; two empty masks agree perfectly -> (1, 1)."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise DimMismatch(f"mask dims differ: {p.shape} vs {g.shape}")
    inter = int(np.count_nonzero(p & g))
    np_, ng = int(np.count_nonzero(p)), int(np.count_nonzero(g))
    if np_ == 0 and ng == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (np_ + ng)
    union = np_ + ng - inter
    jaccard = inter / union
    return dice, jaccard


def _boundary_coords(mask: np.ndarray) -> np.ndarray:
    rows, cols = np.nonzero(boundary_pixels(mask))
    return np.stack([rows, cols], axis=1).astype(float)


def hd95(pred: np.ndarray, gt: np.ndarray) -> float:
    """95th percentile (nearest-rank) of the pooled bidirectional
    boundary-to-boundary nearest-neighbor distances."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise DimMismatch(f"mask dims differ: {p.shape} vs {g.shape}")
    if not p.any() or not g.any():
        raise UndefinedMetric("HD95 undefined for an empty mask")
    bp = _boundary_coords(p)
    bg = _boundary_coords(g)
    d_pg, _ = cKDTree(bg).query(bp)
    d_gp, _ = cKDTree(bp).query(bg)
    pooled = np.sort(np.concatenate([np.atleast_1d(d_pg), np.atleast_1d(d_gp)]))
    rank = math.ceil(0.95 * pooled.size)  # nearest-rank, 1-indexed
    return float(pooled[rank - 1])


def recall_precision(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Recall |P∩G|/|G| and precision |P∩G|/|P|; empty denominators count
    as perfect (no misses / no false positives)."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise DimMismatch(f"mask dims differ: {p.shape} vs {g.shape}")
    inter = int(np.count_nonzero(p & g))
    ng, np_ = int(np.count_nonzero(g)), int(np.count_nonzero(p))
    recall = inter / ng if ng else 1.0
    precision = inter / np_ if np_ else 1.0
    return recall, precision


def mask_quality(q: np.ndarray, c: np.ndarray, gt: np.ndarray):
    """Recall/precision of the under- and over-segmenting masks against gt."""
    recall_q, precision_q = recall_precision(q, gt)
    recall_c, precision_c = recall_precision(c, gt)
    return recall_q, precision_q, recall_c, precision_c


# ---------------------------------------------------------------------------
# Aggregated evaluation reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    dice: float
    jaccard: float
    hd95: Optional[float]  # None when undefined on every slice
    recall: float
    precision: float
    n_slices: int
    n_hd95_undefined: int = 0


def _mean_halfwidth(values: list[float]) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if arr.size < 2:
        return mean, float("nan")
    half = 1.96 * float(arr.std(ddof=1)) / math.sqrt(arr.size)
    return mean, half


def evaluate_slices(pred_masks, gt_masks) -> tuple[list[dict], EvalReport]:
    """Per-slice metric rows plus the aggregate report.

    Slices with an empty ground truth are skipped (lesion segmentation is
    evaluated on lesion-bearing slices only); slices where HD95 is undefined
    keep their other metrics and are flagged.
    """
    rows: list[dict] = []
    for idx, (p, g) in enumerate(zip(pred_masks, gt_masks)):
        if not np.asarray(g).astype(bool).any():
            continue
        d, j = dice_jaccard(p, g)
        rec, prec = recall_precision(p, g)
        try:
            h: Optional[float] = hd95(p, g)
        except UndefinedMetric:
            h = None
        rows.append({"slice": idx, "dice": d, "jaccard": j, "hd95": h,
                     "recall": rec, "precision": prec})
    if not rows:
        raise UndefinedMetric("no lesion-bearing slices to evaluate")
    hd_vals = [r["hd95"] for r in rows if r["hd95"] is not None]
    report = EvalReport(
        dice=float(np.mean([r["dice"] for r in rows])),
        jaccard=float(np.mean([r["jaccard"] for r in rows])),
        hd95=float(np.mean(hd_vals)) if hd_vals else None,
        recall=float(np.mean([r["recall"] for r in rows])),
        precision=float(np.mean([r["precision"] for r in rows])),
        n_slices=len(rows),
        n_hd95_undefined=len(rows) - len(hd_vals),
    )
    return rows, report


def write_report(rows: list[dict], out_json, out_csv=None) -> dict:
    """Serialize per-slice rows plus an aggregate block with 95% confidence
    half-widths; returns the aggregate dict."""
    agg: dict = {"n_slices": len(rows)}
    for key in ("dice", "jaccard", "recall", "precision"):
        mean, half = _mean_halfwidth([r[key] for r in rows])
        agg[key] = {"mean": mean, "halfwidth95": half}
    hd_vals = [r["hd95"] for r in rows if r["hd95"] is not None]
    if hd_vals:
        mean, half = _mean_halfwidth(hd_vals)
        agg["hd95"] = {"mean": mean, "halfwidth95": half,
                       "n_undefined": len(rows) - len(hd_vals)}
    else:
        agg["hd95"] = {"mean": None, "halfwidth95": None, "n_undefined": len(rows)}
    payload = {"aggregate": agg, "slices": rows}
    with open(out_json, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    if out_csv is not None:
        with open(out_csv, "w", newline="") as f:
            writer = csv.DictWriter(
                f, fieldnames=["slice", "dice", "jaccard", "hd95", "recall", "precision"]
            )
            writer.writeheader()
            for r in rows:
                writer.writerow(r)
    return agg
