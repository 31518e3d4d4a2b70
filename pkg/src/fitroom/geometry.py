"""Box arithmetic, anchors, the anchor-relative delta encoding, NMS and
RoI feature extraction.

Boxes are handled as float arrays. ``xywh`` means COCO order
``[top-left x, top-left y, width, height]``; ``center`` means
``[cx, cy, w, h]``. Conversions between the two are exact up to float
rounding (``cx = x + w / 2``).
"""

from enum import IntEnum
import math
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels


class BoxXYWH(NamedTuple):
    x: float
    y: float
    w: float
    h: float


class BoxCenter(NamedTuple):
    cx: float
    cy: float
    w: float
    h: float


class BoxDelta(NamedTuple):
    tx: float
    ty: float
    tw: float
    th: float


class AnchorLabel(IntEnum):
    """Anchor label; the value doubles as the RPN target p* (ignore is -1)."""

    NEGATIVE = 0
    POSITIVE = 1
    IGNORE = -1


class AnchorConfig(NamedTuple):
    scales: Sequence[float] = (32.0, 64.0, 128.0)
    aspect_ratios: Sequence[float] = (0.5, 1.0, 2.0)
    stride: float = 16.0

    def validate(self):
        if not self.scales or not self.aspect_ratios:
            raise ValueError("anchor config needs at least one scale and one ratio")
        if min(self.scales) <= 0 or min(self.aspect_ratios) <= 0 or self.stride <= 0:
            raise ValueError("anchor scales, ratios and stride must be positive")


def xywh_to_center(box):
    b = np.asarray(box, dtype=np.float64)
    out = b.copy()
    out[..., 0] = b[..., 0] + b[..., 2] / 2
    out[..., 1] = b[..., 1] + b[..., 3] / 2
    return out


def center_to_xywh(box):
    b = np.asarray(box, dtype=np.float64)
    out = b.copy()
    out[..., 0] = b[..., 0] - b[..., 2] / 2
    out[..., 1] = b[..., 1] - b[..., 3] / 2
    return out


def iou(a, b):
    """Intersection over union of two xywh boxes; 0 when the union is empty."""
    ax, ay, aw, ah = (float(v) for v in a)
    bx, by, bw, bh = (float(v) for v in b)
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_matrix(boxes_a, boxes_b):
    """Pairwise IoU between (N, 4) and (M, 4) xywh arrays."""
    a = np.asarray(boxes_a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(boxes_b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0:1], a[:, 1:2]
    ax2, ay2 = ax1 + a[:, 2:3], ay1 + a[:, 3:4]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = bx1 + b[:, 2], by1 + b[:, 3]
    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = a[:, 2:3] * a[:, 3:4] + b[:, 2] * b[:, 3] - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def generate_anchors(cfg, feat_h, feat_w):
    """Tile anchors over a feature grid.

    Returns an (feat_h * feat_w * len(scales) * len(ratios), 4) array of
    center-format boxes. Cells are row-major; within a cell anchors are
    ordered scale-major, ratio-minor. Each anchor has area ``scale**2`` and
    ``w / h == ratio``.
    """
    cfg.validate()
    shapes = []
    for s in cfg.scales:
        for r in cfg.aspect_ratios:
            shapes.append((s * math.sqrt(r), s / math.sqrt(r)))
    shapes = np.asarray(shapes)
    rows = []
    for i in range(feat_h):
        for j in range(feat_w):
            cx = (j + 0.5) * cfg.stride
            cy = (i + 0.5) * cfg.stride
            for w, h in shapes:
                rows.append((cx, cy, w, h))
    return np.asarray(rows, dtype=np.float64).reshape(-1, 4)


def encode_box(anchor, gt):
    """Delta (tx, ty, tw, th) that moves center-format ``anchor`` onto ``gt``."""
    xa, ya, wa, ha = (float(v) for v in anchor)
    x, y, w, h = (float(v) for v in gt)
    if min(wa, ha, w, h) <= 0:
        raise ValueError(f"box dimensions must be positive: anchor={anchor}, gt={gt}")
    return BoxDelta((x - xa) / wa, (y - ya) / ha, math.log(w / wa), math.log(h / ha))


def decode_box(anchor, delta):
    """Inverse of :func:`encode_box`."""
    xa, ya, wa, ha = (float(v) for v in anchor)
    tx, ty, tw, th = (float(v) for v in delta)
    if not all(math.isfinite(v) for v in (tx, ty, tw, th)):
        raise ValueError(f"non-finite box delta {tuple(delta)}")
    try:
        w = wa * math.exp(tw)
        h = ha * math.exp(th)
    except OverflowError:
        raise OverflowError(f"box delta {tuple(delta)} overflows exp") from None
    if math.isinf(w) or math.isinf(h):
        raise OverflowError(f"box delta {tuple(delta)} overflows exp")
    return BoxCenter(xa + tx * wa, ya + ty * ha, w, h)


def label_anchors(anchors, gt_boxes, pos_iou=0.7, neg_iou=0.3):
    """Assign positive / negative / ignore labels to center-format anchors.

    An anchor is positive when it attains the highest IoU with some ground
    truth box (all tied anchors count, but only for a non-zero overlap), or
    when its IoU with any ground truth exceeds ``pos_iou``. Anchors whose
    best IoU is below ``neg_iou`` and are not positive are negative; the
    rest are ignored.
    """
    if not 0 <= neg_iou <= pos_iou <= 1:
        raise ValueError("thresholds must satisfy 0 <= neg_iou <= pos_iou <= 1")
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    labels = np.full(len(anchors), AnchorLabel.IGNORE, dtype=np.int8)
    if len(gt) == 0:
        labels[:] = AnchorLabel.NEGATIVE
        return labels
    overlaps = iou_matrix(center_to_xywh(anchors), gt)
    best_per_anchor = overlaps.max(axis=1)
    best_per_gt = overlaps.max(axis=0)
    argmax_hit = ((overlaps == best_per_gt[None, :]) & (best_per_gt[None, :] > 0)).any(axis=1)
    positive = argmax_hit | (best_per_anchor > pos_iou)
    labels[best_per_anchor < neg_iou] = AnchorLabel.NEGATIVE
    labels[positive] = AnchorLabel.POSITIVE
    return labels


def nms(boxes, scores, iou_thresh=0.7):
    """Greedy non-maximum suppression over xywh boxes.

    Boxes are visited by descending score, ties going to the lower index;
    every remaining box with IoU above ``iou_thresh`` against a kept box is
    dropped. Returns kept indices in keep order.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    if len(boxes) != len(scores):
        raise ValueError("boxes and scores differ in length")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if len(scores) == 0:
        return []
    return kernels.nms(boxes, scores, float(iou_thresh))


def roi_align(feat, roi, out_size=7, samples_per_bin=2):
    """Sample a (C, out_size, out_size) grid from ``feat`` without quantizing.

    ``roi`` is xywh in feature-map coordinates, where cell (r, c) covers
    ``[c, c+1) x [r, r+1)`` and its value sits at the cell center. Each bin
    averages ``samples_per_bin**2`` bilinear samples; coordinates are
    clamped at the map border.
    """
    x, y, w, h = (float(v) for v in roi)
    if w <= 0 or h <= 0:
        raise ValueError(f"roi must have positive size, got {tuple(roi)}")
    if out_size < 1 or samples_per_bin < 1:
        raise ValueError("out_size and samples_per_bin must be >= 1")
    feat = np.asarray(feat, dtype=np.float64)
    if feat.ndim != 3:
        raise ValueError("feature map must be (C, H, W)")
    return kernels.roi_align(feat, x, y, w, h, int(out_size), int(samples_per_bin))


def roi_pool(feat, roi, out_size=7):
    """Max-pool a quantized roi into a (C, out_size, out_size) grid.

    The roi corners are floored to integer cells and bin edges are snapped
    to cells, so sub-cell shifts of the roi are invisible in the output.
    """
    feat = np.asarray(feat, dtype=np.float64)
    c, fh, fw = feat.shape
    x, y, w, h = (float(v) for v in roi)
    x0, y0 = math.floor(x), math.floor(y)
    x1, y1 = math.floor(x + w), math.floor(y + h)
    x0c, y0c = max(x0, 0), max(y0, 0)
    x1c, y1c = min(x1, fw), min(y1, fh)
    if x1c <= x0c or y1c <= y0c:
        raise ValueError(f"roi {tuple(roi)} collapses to zero cells")
    rw = x1 - x0
    rh = y1 - y0
    out = np.zeros((c, out_size, out_size))
    for by in range(out_size):
        ys = max(y0 + (by * rh) // out_size, 0)
        ye = min(y0 + -((-(by + 1) * rh) // out_size), fh)
        for bx in range(out_size):
            xs = max(x0 + (bx * rw) // out_size, 0)
            xe = min(x0 + -((-(bx + 1) * rw) // out_size), fw)
            if ye <= ys or xe <= xs:
                continue
            out[:, by, bx] = feat[:, ys:ye, xs:xe].max(axis=(1, 2))
    return out
