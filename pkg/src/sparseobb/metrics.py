"""Rotated-box average precision.

Detections are matched per scene, greedily in score order, each to the
unmatched ground-truth box of highest IoU above the threshold. Precision/
recall is accumulated over the global score ranking, the precision envelope
is made monotone from the right, and AP integrates it at 101 evenly spaced
recall points (0.00, 0.01, ..., 1.00). The summary averages AP over IoU
thresholds 0.50:0.05:0.95.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import iou_matrix

COCO_THRESHOLDS = tuple(np.round(np.arange(0.50, 0.96, 0.05), 2))
RECALL_POINTS = 101


@dataclass
class EvalConfig:
    iou_thresholds: tuple = COCO_THRESHOLDS
    recall_points: int = RECALL_POINTS
    score_threshold: float | None = None  # optional floor applied before ranking


def match_scene(iou: np.ndarray, scores: np.ndarray, thr: float) -> np.ndarray:
    """Greedy per-scene matching. Returns a bool TP flag per detection.

    Detections are visited in descending score (ties: lower index first);
    each takes the unmatched ground truth with the highest IoU if that IoU
    reaches `thr`, else counts as a false positive.
    """
    d, m = iou.shape
    tp = np.zeros(d, dtype=bool)
    if m == 0:
        return tp
    taken = np.zeros(m, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    for i in order:
        row = np.where(taken, -1.0, iou[i])
        j = int(np.argmax(row))
        if row[j] >= thr:
            tp[i] = True
            taken[j] = True
    return tp


def match_detections(dets, gts, iou_t: float) -> np.ndarray:
    """TP flags for one scene's detections against its ground truth.

    Accepts any objects with .boxes (and .scores on the detections);
    computes the rotated IoU matrix and defers to match_scene.
    """
    gt = np.asarray(gts.boxes, dtype=np.float64).reshape(-1, 5)
    boxes = np.asarray(dets.boxes, dtype=np.float64).reshape(-1, 5)
    return match_scene(iou_matrix(boxes, gt),
                       np.asarray(dets.scores, dtype=np.float64), iou_t)


def _interpolated_ap(scores: np.ndarray, tp: np.ndarray, total_gt: int,
                     recall_points: int = RECALL_POINTS) -> float:
    """101-point interpolated AP from pooled detection flags."""
    if total_gt <= 0:
        raise ValueError("AP is undefined with zero ground-truth boxes")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp_sorted = tp[order].astype(np.float64)
    cum_tp = np.cumsum(tp_sorted)
    cum_fp = np.cumsum(1.0 - tp_sorted)
    recall = cum_tp / total_gt
    precision = cum_tp / np.maximum(cum_tp + cum_fp, 1e-12)
    # monotone envelope from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    grid = np.linspace(0.0, 1.0, recall_points)
    idx = np.searchsorted(recall, grid, side="left")
    ap = 0.0
    for k in idx:
        ap += envelope[k] if k < len(envelope) else 0.0
    return ap / recall_points


def ap_at_threshold(preds: list, gts: list, thr: float,
                    recall_points: int = RECALL_POINTS,
                    iou_cache: list | None = None) -> float:
    """AP at one IoU threshold.

    preds: per scene (boxes (D, 5), scores (D,)); gts: per scene (M, 5).
    """
    if len(preds) != len(gts):
        raise ValueError("preds and gts must cover the same scenes")
    all_scores, all_tp = [], []
    total_gt = 0
    for si, ((boxes, scores), gt) in enumerate(zip(preds, gts)):
        gt = np.asarray(gt, dtype=np.float64).reshape(-1, 5)
        total_gt += len(gt)
        iou = iou_cache[si] if iou_cache is not None else iou_matrix(boxes, gt)
        all_scores.append(np.asarray(scores, dtype=np.float64))
        all_tp.append(match_scene(iou, np.asarray(scores), thr))
    return _interpolated_ap(np.concatenate(all_scores), np.concatenate(all_tp),
                            total_gt, recall_points)


def coco_summary(preds: list, gts: list, cfg: EvalConfig | None = None) -> dict:
    """Mean AP over the IoU threshold sweep plus per-threshold values."""
    cfg = cfg or EvalConfig()
    if cfg.score_threshold is not None:
        filtered = []
        for boxes, scores in preds:
            keep = np.asarray(scores) >= cfg.score_threshold
            filtered.append((np.asarray(boxes)[keep], np.asarray(scores)[keep]))
        preds = filtered
    cache = [iou_matrix(np.asarray(b), np.asarray(g).reshape(-1, 5))
             for (b, _), g in zip(preds, gts)]
    per_thr = {}
    for thr in cfg.iou_thresholds:
        per_thr[float(thr)] = ap_at_threshold(preds, gts, float(thr),
                                              cfg.recall_points, iou_cache=cache)
    vals = list(per_thr.values())
    out = {"ap": float(np.mean(vals)), "per_threshold": per_thr}
    out["ap50"] = per_thr.get(0.5, None)
    out["ap75"] = per_thr.get(0.75, None)
    return out
