"""Detection metrics.

Plant counting is scored two ways: count errors per patch (MAE / MRE /
MSE) and matched-point precision / recall / F-measure pooled over all
patches.  Rows are scored at pixel level after rasterizing both polyline
sets and buffering each by a disc of radius rho.

Coordinate frames: ground truth is annotated on 256x256 patches while
the network predicts 128x128 maps, so `evaluate` scales detections by
`det_scale` (default 2) before point matching and divides gt polylines
by the same factor before rasterizing at map resolution.  The matching
radius is therefore in annotation pixels (8 for corn-like scenes, 15
for citrus-like), the row buffer in map pixels.
"""

import math
from dataclasses import dataclass

import numpy as np


def match_points(pred, gt, radius):
    """Greedy one-to-one matching: candidate pairs within `radius` are
    accepted in ascending distance order while both endpoints are free.
    Returns (tp, fp, fn, pairs) with pairs as (pred_index, gt_index).

    Ties are broken on coordinates, not list position, so the result is
    invariant under reordering of either input list."""
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    r2 = radius * radius
    cand = []
    for i, (px, py) in enumerate(pred):
        for j, (gx, gy) in enumerate(gt):
            d2 = (px - gx) ** 2 + (py - gy) ** 2
            if d2 <= r2:
                cand.append((d2, px, py, gx, gy, i, j))
    cand.sort()
    p_used, g_used = set(), set()
    pairs = []
    for _, _, _, _, _, i, j in cand:
        if i not in p_used and j not in g_used:
            p_used.add(i)
            g_used.add(j)
            pairs.append((i, j))
    tp = len(pairs)
    return tp, len(pred) - tp, len(gt) - tp, sorted(pairs)


def point_metrics(records):
    """Aggregate per-patch match records (dicts with gt_count, pred_count,
    tp, fp, fn) into the plant metric block.  Count errors average per
    patch; precision/recall pool tp/fp/fn across patches."""
    if not records:
        raise ValueError("point_metrics needs at least one patch record")
    errs = [abs(r["pred_count"] - r["gt_count"]) for r in records]
    rel = [e / r["gt_count"] for e, r in zip(errs, records) if r["gt_count"] > 0]
    tp = sum(r["tp"] for r in records)
    fp = sum(r["fp"] for r in records)
    fn = sum(r["fn"] for r in records)
    flags = []
    if not rel:
        flags.append("mre_undefined")
    precision, recall = 0.0, 0.0
    if tp + fp > 0:
        precision = tp / (tp + fp)
    else:
        flags.append("precision_undefined")
    if tp + fn > 0:
        recall = tp / (tp + fn)
    else:
        flags.append("recall_undefined")
    fm = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "mae": sum(errs) / len(errs),
        "mre": sum(rel) / len(rel) if rel else 0.0,
        "mse": sum(e * e for e in errs) / len(errs),
        "precision": precision,
        "recall": recall,
        "f_measure": fm,
        "flags": sorted(flags),
    }


def rasterize_polylines(polys, shape):
    """Burn polylines into a boolean grid by dense sampling (step 0.5 px,
    so consecutive samples can never skip a pixel); out-of-bounds samples
    are dropped."""
    h, w = shape
    mask = np.zeros((h, w), bool)
    for poly in polys:
        for (x1, y1), (x2, y2) in zip(poly[:-1], poly[1:]):
            n = max(1, math.ceil(math.dist((x1, y1), (x2, y2)) / 0.5))
            ts = np.linspace(0.0, 1.0, n + 1)
            xs = np.rint(x1 + ts * (x2 - x1)).astype(int)
            ys = np.rint(y1 + ts * (y2 - y1)).astype(int)
            keep = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
            mask[ys[keep], xs[keep]] = True
    return mask


def dilate_disc(mask, rho):
    """Dilate by a disc of radius rho via shifted ORs."""
    h, w = mask.shape
    r = math.floor(rho)
    out = mask.copy()
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dy == dx == 0 or dy * dy + dx * dx > rho * rho:
                continue
            out[max(0, dy) : h + min(0, dy), max(0, dx) : w + min(0, dx)] |= mask[
                max(0, -dy) : h + min(0, -dy), max(0, -dx) : w + min(0, -dx)
            ]
    return out


def row_pixel_counts(pred_polys, gt_polys, shape, rho):
    """Per-patch pixel tallies for buffered row matching: total and
    within-buffer pixel counts for each side."""
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    pm = rasterize_polylines(pred_polys, shape)
    gm = rasterize_polylines(gt_polys, shape)
    pred_hit = int((pm & dilate_disc(gm, rho)).sum()) if gm.any() else 0
    gt_hit = int((gm & dilate_disc(pm, rho)).sum()) if pm.any() else 0
    return {
        "pred_px": int(pm.sum()),
        "pred_hit": pred_hit,
        "gt_px": int(gm.sum()),
        "gt_hit": gt_hit,
    }


def row_metrics(counts):
    """Pool per-patch pixel tallies into the row metric block."""
    pred_px = sum(c["pred_px"] for c in counts)
    pred_hit = sum(c["pred_hit"] for c in counts)
    gt_px = sum(c["gt_px"] for c in counts)
    gt_hit = sum(c["gt_hit"] for c in counts)
    flags = []
    if pred_px == 0 and gt_px == 0:
        # nothing predicted, nothing to find: scored perfect by convention
        return {
            "precision": 1.0,
            "recall": 1.0,
            "f_measure": 1.0,
            "flags": ["row_trivial"],
        }
    precision, recall = 0.0, 0.0
    if pred_px > 0:
        precision = pred_hit / pred_px
    else:
        flags.append("precision_undefined")
    if gt_px > 0:
        recall = gt_hit / gt_px
    else:
        flags.append("recall_undefined")
    fm = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f_measure": fm,
        "flags": sorted(flags),
    }


@dataclass
class EvalReport:
    plant: dict
    row: dict | None
    per_patch: list

    def to_json_dict(self):
        out = {"plant": self.plant, "per_patch": self.per_patch}
        if self.row is not None:
            out["row"] = self.row
        return out

    def to_text(self):
        lines = [f"patches={len(self.per_patch)}"]
        for key in ("mae", "mre", "mse", "precision", "recall", "f_measure"):
            lines.append(f"plant_{key}={self.plant[key]!r}")
        lines.append("plant_flags=" + ",".join(self.plant["flags"]))
        if self.row is not None:
            for key in ("precision", "recall", "f_measure"):
                lines.append(f"row_{key}={self.row[key]!r}")
            lines.append("row_flags=" + ",".join(self.row["flags"]))
        return "\n".join(lines) + "\n"


def evaluate(pred, gt, radius, rho=3.0, map_shape=(128, 128), det_scale=2.0, rows=True):
    """Score per-patch detections against per-patch ground truth.

    `pred` and `gt` map patch id -> AnnotationSet; both must cover the
    same patches.  Predictions are in map coordinates and are scaled by
    `det_scale` into the annotation frame for point matching; gt
    polylines are scaled down by the same factor for row rasterization.
    """
    if set(pred) != set(gt):
        raise ValueError("prediction and ground-truth patch sets differ")
    records = []
    counts = []
    for pid in sorted(pred):
        p, g = pred[pid], gt[pid]
        scaled = [(x * det_scale, y * det_scale) for x, y in p.points]
        tp, fp, fn, _ = match_points(scaled, g.points, radius)
        records.append(
            {
                "patch": pid,
                "gt_count": len(g.points),
                "pred_count": len(p.points),
                "tp": tp,
                "fp": fp,
                "fn": fn,
            }
        )
        if rows:
            gt_polys = [
                [(x / det_scale, y / det_scale) for x, y in poly] for poly in g.polylines
            ]
            counts.append(row_pixel_counts(p.polylines, gt_polys, map_shape, rho))
    return EvalReport(
        plant=point_metrics(records),
        row=row_metrics(counts) if rows else None,
        per_patch=records,
    )
