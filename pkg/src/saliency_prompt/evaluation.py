"""Class-agnostic box AP and kernel activation heatmaps.

Boxes are ``(x0, y0, x1, y1)`` with both corners inclusive, so a single
pixel at row 2, column 3 is ``(3, 2, 3, 2)`` and has area 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IOU_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
RECALL_STEPS = 100  # recall levels k / 100 for k = 0..100
HEATMAP_SIZE = 200


def mask_to_box(mask) -> tuple[int, int, int, int] | None:
    """Tightest inclusive box around the nonzero pixels, ``None`` if empty."""
    m = np.asarray(mask).astype(bool)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        return None
    cols = np.flatnonzero(m.any(axis=0))
    return (int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1]))


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0) + 1
    ih = min(ay1, by1) - max(ay0, by0) + 1
    inter = max(iw, 0) * max(ih, 0)
    area_a = (ax1 - ax0 + 1) * (ay1 - ay0 + 1)
    area_b = (bx1 - bx0 + 1) * (by1 - by0 + 1)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def mask_iou(a, b) -> float:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 0.0
    return np.count_nonzero(a & b) / union


@dataclass
class DetectionRecord:
    image_id: str | int
    pred_boxes: list = field(default_factory=list)
    scores: list = field(default_factory=list)
    gt_boxes: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.pred_boxes) != len(self.scores):
            raise ValueError("pred_boxes and scores differ in length")
        for s in self.scores:
            if not 0.0 <= s <= 1.0:
                raise ValueError(f"score {s} outside [0, 1]")


def _ap_at(records: list[DetectionRecord], thr: float) -> float | None:
    n_gt = sum(len(r.gt_boxes) for r in records)
    if n_gt == 0:
        return None
    preds = []
    for img, rec in enumerate(records):
        for k, (box, score) in enumerate(zip(rec.pred_boxes, rec.scores)):
            best = max((box_iou(box, g) for g in rec.gt_boxes), default=0.0)
            preds.append((-float(score), img, -best, k))
    if not preds:
        return 0.0
    preds.sort()
    taken = [np.zeros(len(r.gt_boxes), dtype=bool) for r in records]
    tp = np.zeros(len(preds))
    for idx, (_, img, _, k) in enumerate(preds):
        rec = records[img]
        best_iou, best_g = thr, -1
        for g, gbox in enumerate(rec.gt_boxes):
            if taken[img][g]:
                continue
            iou = box_iou(rec.pred_boxes[k], gbox)
            if iou >= best_iou:
                best_iou, best_g = iou, g
        if best_g >= 0:
            taken[img][best_g] = True
            tp[idx] = 1.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    # level k is reached once tp / n_gt >= k / 100; compare in integers so
    # that e.g. recall 3/10 counts for level 0.3
    idx = np.searchsorted(ctp * RECALL_STEPS, np.arange(RECALL_STEPS + 1) * n_gt, side="left")
    sampled = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(sampled.mean())


def average_precision(records, iou_thresholds=IOU_THRESHOLDS) -> dict:
    """COCO-style class-agnostic box AP with 101-point interpolation.

    Predictions from all images are ranked together by score; equal scores
    fall back to the earlier image, then the larger best IoU. Each
    prediction greedily claims the highest-IoU unclaimed ground truth in its
    image. Returns ``{"AP", "AP50", "AP75"}``; every value is ``None`` when
    no image carries ground truth.
    """
    records = list(records)
    per_thr = {float(t): _ap_at(records, float(t)) for t in iou_thresholds}
    if any(v is None for v in per_thr.values()):
        return {"AP": None, "AP50": None, "AP75": None}
    ap50 = per_thr.get(0.5, _ap_at(records, 0.5))
    ap75 = per_thr.get(0.75, _ap_at(records, 0.75))
    return {"AP": float(np.mean(list(per_thr.values()))), "AP50": ap50, "AP75": ap75}


def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of the last two axes, half-pixel centers, edge clamped."""
    img = np.asarray(img, dtype=np.float64)
    ylo, yhi, fy = _axis_weights(img.shape[-2], out_h)
    xlo, xhi, fx = _axis_weights(img.shape[-1], out_w)
    rows = img[..., ylo, :] * (1 - fy)[:, None] + img[..., yhi, :] * fy[:, None]
    return rows[..., xlo] * (1 - fx) + rows[..., xhi] * fx


@dataclass
class KernelHeatmap:
    data: np.ndarray  # N x 200 x 200
    image_count: int


def kernel_heatmap(mask_stacks, activation_threshold: float | None = None,
                   size: int = HEATMAP_SIZE) -> KernelHeatmap:
    """Average each kernel's final-stage mask over a set of images.

    ``mask_stacks`` yields one ``N x H x W`` array of activations in [0, 1]
    per image; image sizes may differ. With ``activation_threshold`` set,
    masks are binarized before resizing.
    """
    total = None
    count = 0
    for masks in mask_stacks:
        m = np.asarray(masks, dtype=np.float64)
        if activation_threshold is not None:
            m = (m >= activation_threshold).astype(np.float64)
        r = resize_bilinear(m, size, size)
        total = r if total is None else total + r
        count += 1
    if count == 0:
        raise ValueError("no images to average")
    return KernelHeatmap(np.clip(total / count, 0.0, 1.0), count)
