"""Question-swap probe: does the predicted mask follow the question?"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metrics import iou
from .model import predict_mask


@dataclass
class SwapResult:
    disagreement: np.ndarray  # per image: fraction of pixels where the two masks differ
    ious: np.ndarray  # (n_images, 2): IoU of each prediction with its own shape

    @property
    def mean_disagreement(self) -> float:
        return float(self.disagreement.mean())

    def fraction_iou_above(self, threshold=0.5) -> float:
        return float((self.ious > threshold).mean())


def question_swap(model, samples, batch_size=32) -> SwapResult:
    """Ask about the first two shapes of every image; compare the two predicted masks.

    Images with fewer than two shapes are skipped.
    """
    pairs = [s for s in samples if len(s.shapes) >= 2]
    if not pairs:
        raise ValueError("probe needs images with at least two shapes")
    dis, ious = [], []
    for i in range(0, len(pairs), batch_size):
        chunk = pairs[i : i + batch_size]
        images = np.stack([s.image for s in chunk]).astype(model.dtype)
        preds = []
        for k in (0, 1):
            qs = [f"where is the {s.shapes[k][0]} {s.shapes[k][1]}?" for s in chunk]
            ans = [f"{s.shapes[k][0]} {s.shapes[k][1]}" for s in chunk]
            preds.append(predict_mask(model.logits(images, qs, ans).data))
        for j, s in enumerate(chunk):
            dis.append(float((preds[0][j] != preds[1][j]).mean()))
            ious.append([iou(preds[k][j], s.shapes[k][2]) for k in (0, 1)])
    return SwapResult(np.asarray(dis), np.asarray(ious))
