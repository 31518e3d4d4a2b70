"""Detection scoring: greedy matching, precision/recall, AP, mAP and ASDR."""

from collections import defaultdict
from dataclasses import dataclass, field
import csv
import json
import logging
import math
import os

import numpy as np

from .annotations import rasterize
from .geometry import iou_matrix
from .imaging import read_mask_png

log = logging.getLogger(__name__)


@dataclass
class Detection:
    image_id: int
    category_id: int
    bbox: tuple
    score: float
    mask: np.ndarray = None

    def __post_init__(self):
        self.bbox = tuple(float(v) for v in self.bbox)
        if len(self.bbox) != 4:
            raise ValueError(f"bbox must have four numbers, got {self.bbox}")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise ValueError(f"detection score must be finite and in [0, 1], got {self.score}")

    def to_json(self):
        return {"image_id": self.image_id, "category_id": self.category_id, "bbox": list(self.bbox), "score": self.score}


@dataclass
class PrCurve:
    precisions: list
    recalls: list
    n_gt: int
    scores: list = field(default_factory=list)


@dataclass
class AsdrPair:
    s_before: float
    s_after: float
    category_id: int = None


def _order(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return np.lexsort((np.arange(len(scores)), -scores))


def greedy_match(ious, scores, iou_thresh=0.5):
    """TP flags (input order) from a (num_dets, num_gts) IoU matrix.

    Detections go by descending score (ties: lower index first) and each
    claims the unclaimed ground truth it overlaps most, provided the overlap
    reaches ``iou_thresh``.
    """
    ious = np.asarray(ious, dtype=np.float64).reshape(len(scores), -1)
    flags = np.zeros(len(scores), dtype=bool)
    claimed = np.zeros(ious.shape[1], dtype=bool)
    for d in _order(scores):
        if not ious.shape[1]:
            break
        row = np.where(claimed, -1.0, ious[d])
        g = int(np.argmax(row))
        if not claimed[g] and row[g] >= iou_thresh:
            claimed[g] = True
            flags[d] = True
    return flags


def match_detections(det_boxes, det_scores, gt_boxes, iou_thresh=0.5):
    """TP/FP flags for the detections of one image and one category (box IoU)."""
    return greedy_match(iou_matrix(det_boxes, gt_boxes), det_scores, iou_thresh)


def mask_iou_matrix(masks_a, masks_b):
    out = np.zeros((len(masks_a), len(masks_b)))
    for i, a in enumerate(masks_a):
        for j, b in enumerate(masks_b):
            union = np.logical_or(a, b).sum()
            out[i, j] = np.logical_and(a, b).sum() / union if union else 0.0
    return out


def pr_curve(flags, scores, n_gt):
    """Cumulative precision and recall after each detection, best score first."""
    if len(flags) != len(scores):
        raise ValueError("flags and scores differ in length")
    order = _order(scores)
    precisions, recalls, ordered = [], [], []
    tp = 0
    for k, d in enumerate(order, 1):
        tp += bool(flags[d])
        precisions.append(tp / k)
        recalls.append(tp / n_gt if n_gt else 0.0)
        ordered.append(float(scores[d]))
    return PrCurve(precisions, recalls, n_gt, ordered)


def average_precision(curve):
    """Area under the precision/recall list after padding both ends.

    Precisions get 1 in front and 0 behind, recalls 0 in front and 1
    behind; AP is then ``sum_{i=1}^{l-1} (r[i] - r[i-1]) * p[i]``.
    """
    if curve.n_gt == 0:
        return 0.0
    p = [1.0, *curve.precisions, 0.0]
    r = [0.0, *curve.recalls, 1.0]
    ap = 0.0
    for i in range(1, len(r)):
        ap += (r[i] - r[i - 1]) * p[i]
    return ap


def mean_ap(per_category_aps):
    if not per_category_aps:
        raise ValueError("no categories with ground truth to average over")
    values = [per_category_aps[k] for k in sorted(per_category_aps)]
    return sum(values) / len(values)


@dataclass
class MapReport:
    mean_ap: float
    aps: dict
    curves: dict
    n_gt: dict
    n_det: dict
    iou_threshold: float
    basis: str
    skipped_categories: list = field(default_factory=list)

    def to_json(self):
        return {
            "basis": self.basis,
            "iou_threshold": self.iou_threshold,
            "mAP": round(self.mean_ap, 10),
            "categories": {
                str(k): {"ap": round(self.aps[k], 10), "n_gt": self.n_gt[k], "n_det": self.n_det[k]} for k in sorted(self.aps)
            },
            "skipped_categories": self.skipped_categories,
            "note": "categories without ground-truth instances are excluded from the mean",
        }

    def write(self, out_dir):
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        for cat, curve in sorted(self.curves.items()):
            with open(os.path.join(out_dir, f"pr_{cat}.csv"), "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["rank", "score", "precision", "recall"])
                for rank, (s, p, r) in enumerate(zip(curve.scores, curve.precisions, curve.recalls), 1):
                    writer.writerow([rank, f"{s:.10f}", f"{p:.10f}", f"{r:.10f}"])


def evaluate_map(gt_records, detections, iou_thresh=0.5, mask_iou=False, image_sizes=None):
    """Per-category AP and mAP of ``detections`` against annotation records.

    With ``mask_iou`` the overlap is measured on masks: ground truth polygons
    are rasterized at the size given by ``image_sizes[image_id]`` (as
    ``(height, width)``) or else at the detection mask's size.
    """
    image_sizes = image_sizes or {}
    gts = defaultdict(list)
    for rec in gt_records:
        gts[(rec.image_id, rec.category_id)].append(rec)
    dets = defaultdict(list)
    for det in detections:
        dets[(det.image_id, det.category_id)].append(det)
    gt_cats = sorted({c for _, c in gts})
    skipped = sorted({c for _, c in dets} - set(gt_cats))
    for cat in skipped:
        log.warning("category %s has predictions but no ground truth; skipped", cat)

    aps, curves, n_gt, n_det = {}, {}, {}, {}
    for cat in gt_cats:
        flags, scores = [], []
        total_gt = 0
        for img in sorted({i for i, c in list(gts) + list(dets) if c == cat}):
            g = gts.get((img, cat), [])
            d = dets.get((img, cat), [])
            total_gt += len(g)
            if not d:
                continue
            s = [x.score for x in d]
            if mask_iou:
                ious = mask_iou_matrix([x.mask for x in d], _gt_masks(g, d, image_sizes.get(img)))
            else:
                ious = iou_matrix([x.bbox for x in d], [x.bbox for x in g])
            flags.extend(greedy_match(ious, s, iou_thresh))
            scores.extend(s)
        curve = pr_curve(flags, scores, total_gt)
        curves[cat] = curve
        aps[cat] = average_precision(curve)
        n_gt[cat] = total_gt
        n_det[cat] = len(scores)
    if not aps:
        raise ValueError("ground truth contains no annotations")
    return MapReport(mean_ap(aps), aps, curves, n_gt, n_det, iou_thresh, "mask" if mask_iou else "box", skipped)


def _gt_masks(records, dets, size):
    if size is None:
        for d in dets:
            if d.mask is None:
                raise ValueError(f"image {d.image_id}: mask IoU needs detection masks or image sizes")
        size = dets[0].mask.shape
    for d in dets:
        if d.mask is None or d.mask.shape != tuple(size):
            raise ValueError(f"image {d.image_id}: detection mask missing or not {tuple(size)}")
    return [rasterize(r.segmentation, size[0], size[1]) for r in records]


def load_detections(path, with_masks=False):
    """Read a JSON array of ``{image_id, category_id, bbox, score[, mask_png]}``."""
    with open(path, "rb") as fh:
        raw = json.loads(fh.read())
    if isinstance(raw, dict):
        raw = raw.get("detections", raw.get("annotations", []))
    base = os.path.dirname(os.path.abspath(path))
    out = []
    for n, item in enumerate(raw):
        try:
            mask = None
            if with_masks and item.get("mask_png"):
                mask = read_mask_png(os.path.join(base, item["mask_png"]))
            out.append(Detection(item["image_id"], item["category_id"], item["bbox"], float(item["score"]), mask))
        except (KeyError, TypeError) as exc:
            raise ValueError(f"{path}: detection {n} is malformed ({exc})") from None
    return out


def dump_detections(path, detections):
    with open(path, "w") as fh:
        json.dump([d.to_json() for d in detections], fh, indent=2)
        fh.write("\n")


def correspond_items(before, after, iou_thresh=0.5):
    """Pair each before-image detection with its after-image counterpart.

    Before-items are visited by descending score (ties: lower index); each
    takes the unclaimed same-image, same-category after-item of highest box
    IoU, if that IoU reaches ``iou_thresh``. Unpaired items get
    ``s_after = 0``. Pairs come back in the visiting order.
    """
    claimed = [False] * len(after)
    pairs = []
    for b in _order([d.score for d in before]):
        item = before[b]
        best, best_iou = None, -1.0
        for a, cand in enumerate(after):
            if claimed[a] or cand.category_id != item.category_id or cand.image_id != item.image_id:
                continue
            ov = float(iou_matrix([item.bbox], [cand.bbox])[0, 0])
            if ov > best_iou:
                best, best_iou = a, ov
        if best is not None and best_iou >= iou_thresh:
            claimed[best] = True
            pairs.append(AsdrPair(item.score, after[best].score, item.category_id))
        else:
            pairs.append(AsdrPair(item.score, 0.0, item.category_id))
    return pairs


def asdr(pairs):
    """Mean over items of ``max(s_before - s_after, 0) / s_before``."""
    if not pairs:
        raise ValueError("ASDR needs at least one item")
    total = 0.0
    for n, pair in enumerate(pairs):
        if pair.s_before <= 0:
            raise ValueError(f"pair {n} (category {pair.category_id}) has s_before = {pair.s_before}")
        total += max(pair.s_before - pair.s_after, 0.0) / pair.s_before
    return total / len(pairs)
