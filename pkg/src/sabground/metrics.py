"""Grounding metrics: per-sample foreground IoU and Spearman rank correlation."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def iou(pred, gt) -> float:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def mean_iou(pred_masks, gt_masks) -> float:
    """Mean over samples of foreground IoU; an empty union scores 1."""
    pred_masks, gt_masks = list(pred_masks), list(gt_masks)
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"{len(pred_masks)} predictions for {len(gt_masks)} targets")
    if not pred_masks:
        raise ValueError("mean_iou of an empty collection")
    return float(np.mean([iou(p, g) for p, g in zip(pred_masks, gt_masks)]))


def rank_correlation(pred_map, gt_map) -> float:
    """Spearman correlation with average ranks for ties; a constant map gives 0."""
    a = np.asarray(pred_map, dtype=np.float64).ravel()
    b = np.asarray(gt_map, dtype=np.float64).ravel()
    if np.shape(pred_map) != np.shape(gt_map):
        raise ValueError(f"map shapes differ: {np.shape(pred_map)} vs {np.shape(gt_map)}")
    if a.size < 2:
        raise ValueError("rank correlation needs at least two pixels")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.dot(ra, ra) * np.dot(rb, rb))
    if denom == 0:
        return 0.0
    return float(np.dot(ra, rb) / denom)
