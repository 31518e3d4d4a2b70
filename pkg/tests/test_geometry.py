import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fitroom.geometry import (
    AnchorConfig,
    AnchorLabel,
    BoxCenter,
    center_to_xywh,
    decode_box,
    encode_box,
    generate_anchors,
    iou,
    iou_matrix,
    label_anchors,
    nms,
    roi_align,
    roi_pool,
    xywh_to_center,
)


def area_iou(a, b):
    """IoU from explicit corner arithmetic."""
    left, right = max(a[0], b[0]), min(a[0] + a[2], b[0] + b[2])
    top, bottom = max(a[1], b[1]), min(a[1] + a[3], b[1] + b[3])
    inter = max(right - left, 0) * max(bottom - top, 0)
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def nms_oracle(boxes, scores, thresh):
    remaining = list(range(len(boxes)))
    keep = []
    while remaining:
        best = remaining[0]
        for i in remaining:
            if scores[i] > scores[best] or (scores[i] == scores[best] and i < best):
                best = i
        keep.append(best)
        remaining = [i for i in remaining if i != best and area_iou(boxes[i], boxes[best]) <= thresh]
    return keep


def random_boxes(rng, n, span=60.0):
    return np.column_stack([rng.uniform(0, span, (n, 2)), rng.uniform(2, span / 2, (n, 2))])


# --- iou -------------------------------------------------------------------

def test_iou_examples():
    assert iou([3, 4, 5, 6], [3, 4, 5, 6]) == 1.0
    assert iou([0, 0, 10, 10], [20, 20, 5, 5]) == 0.0
    assert iou([0, 0, 10, 10], [5, 0, 10, 10]) == pytest.approx(1 / 3, abs=1e-15)
    assert iou([0, 0, 0, 0], [0, 0, 0, 0]) == 0.0


def test_iou_matrix_matches_scalar():
    rng = np.random.default_rng(0)
    a, b = random_boxes(rng, 7), random_boxes(rng, 5)
    m = iou_matrix(a, b)
    for i in range(7):
        for j in range(5):
            assert m[i, j] == pytest.approx(area_iou(a[i], b[j]), abs=1e-15)
            assert m[i, j] == pytest.approx(iou(b[j], a[i]), abs=1e-15)
    assert np.all((m >= 0) & (m <= 1))


# --- anchors ---------------------------------------------------------------

def test_anchor_grid_counting():
    a = generate_anchors(AnchorConfig((32,), (1.0,), 16), 2, 2)
    assert a.tolist() == [[8, 8, 32, 32], [24, 8, 32, 32], [8, 24, 32, 32], [24, 24, 32, 32]]


def test_anchor_ratio_preserves_area():
    (cx, cy, w, h), = generate_anchors(AnchorConfig((32,), (2.0,), 16), 1, 1)
    assert w == pytest.approx(32 * math.sqrt(2)) and h == pytest.approx(32 / math.sqrt(2))
    assert w * h == pytest.approx(1024)


def test_anchor_order_scale_major():
    a = generate_anchors(AnchorConfig(), 1, 2)
    assert len(a) == 18
    areas = (a[:9, 2] * a[:9, 3]).round(6)
    assert areas.tolist() == [1024] * 3 + [4096] * 3 + [16384] * 3
    assert np.allclose(a[:9, 2] / a[:9, 3], [0.5, 1, 2] * 3)
    assert np.all(a[9:, 0] == 24)


def test_anchor_config_validation():
    with pytest.raises(ValueError):
        generate_anchors(AnchorConfig((), (1.0,), 16), 1, 1)
    with pytest.raises(ValueError):
        generate_anchors(AnchorConfig((32,), (-1.0,), 16), 1, 1)


# --- deltas ----------------------------------------------------------------

def test_encode_examples():
    assert encode_box((10, 10, 10, 10), (10, 10, 10, 10)) == (0, 0, 0, 0)
    t = encode_box((10, 10, 10, 10), (15, 10, 20, 10))
    assert t == pytest.approx((0.5, 0, math.log(2), 0), abs=1e-15)
    with pytest.raises(ValueError):
        encode_box((0, 0, 0, 4), (1, 1, 1, 1))


def test_decode_examples():
    assert decode_box((10, 10, 10, 10), (0, 0, 0, 0)) == (10, 10, 10, 10)
    assert decode_box((10, 10, 10, 10), (0.5, 0, math.log(2), 0)) == pytest.approx((15, 10, 20, 10), abs=1e-12)
    tiny = decode_box((10, 10, 10, 10), (0, 0, -700, -700))
    assert tiny.w > 0 and tiny.h > 0
    with pytest.raises(OverflowError, match="800"):
        decode_box((10, 10, 10, 10), (0, 0, 800, 0))
    with pytest.raises(ValueError):
        decode_box((10, 10, 10, 10), (math.nan, 0, 0, 0))


def test_box_format_conversion_exact():
    b = np.array([1.5, 2.25, 3.0, 5.5])
    assert np.array_equal(center_to_xywh(xywh_to_center(b)), b)


# --- labels ----------------------------------------------------------------

def test_label_examples():
    gt = [[0, 0, 20, 20]]
    exact = xywh_to_center([0, 0, 20, 20])
    high = xywh_to_center([0, 0, 20, 25])  # IoU 0.8
    mid = xywh_to_center([0, 0, 20, 40])  # IoU 0.5
    far = xywh_to_center([60, 60, 10, 10])
    labels = label_anchors([exact, high, mid, far], gt)
    assert labels.tolist() == [AnchorLabel.POSITIVE, AnchorLabel.POSITIVE, AnchorLabel.IGNORE, AnchorLabel.NEGATIVE]


def test_argmax_clause_makes_low_overlap_positive():
    gt = [[0, 0, 20, 20]]
    anchors = [xywh_to_center([10, 10, 20, 20]), xywh_to_center([10, 10, 20, 20]), xywh_to_center([15, 15, 20, 20])]
    labels = label_anchors(anchors, gt)
    # the two tied best anchors (IoU 1/7) are positive; the other is negative
    assert labels.tolist() == [1, 1, 0]


def test_no_ground_truth_means_all_negative():
    assert label_anchors(generate_anchors(AnchorConfig(), 2, 2), []).tolist() == [0] * 36


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_every_overlapped_gt_has_a_positive(seed):
    rng = np.random.default_rng(seed)
    anchors = generate_anchors(AnchorConfig((16, 32), (0.5, 1, 2), 8), 6, 6)
    gt = random_boxes(rng, 3, span=40.0)
    labels = label_anchors(anchors, gt)
    ov = iou_matrix(center_to_xywh(anchors), gt)
    for g in range(len(gt)):
        if ov[:, g].max() > 0:
            assert np.any(labels[ov[:, g] == ov[:, g].max()] == AnchorLabel.POSITIVE)
    assert set(np.unique(labels)) <= {-1, 0, 1}


# --- nms -------------------------------------------------------------------

def test_nms_examples():
    assert nms([[0, 0, 5, 5]], [0.3]) == [0]
    assert nms([[0, 0, 5, 5], [0, 0, 5, 5]], [0.8, 0.9]) == [1]
    assert nms(np.zeros((0, 4)), []) == []


def test_nms_ties_go_to_lower_index():
    assert nms([[0, 0, 5, 5], [0, 0, 5, 5], [0, 0, 5, 5]], [0.5, 0.5, 0.5]) == [0]


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("thresh", [0.3, 0.5, 0.7])
def test_nms_matches_oracle_on_50_boxes(seed, thresh):
    rng = np.random.default_rng(seed)
    boxes = random_boxes(rng, 50)
    scores = rng.uniform(size=50).round(2)  # coarse rounding forces ties
    assert nms(boxes, scores, thresh) == nms_oracle(boxes, scores, thresh)


# --- roi align / pool --------------------------------------------------------

def ramp(h, w):
    return np.broadcast_to(np.arange(w) + 0.5, (2, h, w)).copy()


def ramp_oracle(roi, m, s):
    x, _, w, _ = roi
    bw = w / m
    return np.array([np.mean([x + (bx + (sx + 0.5) / s) * bw for sx in range(s)]) for bx in range(m)])


@pytest.mark.parametrize("roi", [(0.3, 1.7, 4.2, 3.1), (5.25, 5.5, 0.4, 0.9), (0, 0, 16, 16), (-2, 3, 30, 2)])
def test_roi_align_constant_map_is_exact(roi):
    feat = np.full((3, 16, 16), 0.1)
    out = roi_align(feat, roi, 7, 2)
    assert np.all(out == 0.1)


@pytest.mark.parametrize("roi,m,s", [((2.3, 3.1, 7.7, 4.4), 7, 2), ((4.01, 2, 3.3, 3), 3, 3), ((1, 1, 10, 10), 5, 1)])
def test_roi_align_ramp_gives_mean_sample_x(roi, m, s):
    out = roi_align(ramp(16, 16), roi, m, s)
    want = ramp_oracle(roi, m, s)
    assert np.max(np.abs(out - want[None, None, :])) < 1e-9


def test_roi_align_equals_pool_when_aligned():
    feat = np.random.default_rng(2).normal(size=(4, 12, 12))
    assert np.array_equal(roi_align(feat, (2, 3, 4, 4), 4, 1), roi_pool(feat, (2, 3, 4, 4), 4))


def test_roi_align_translation_invariance():
    rng = np.random.default_rng(5)
    feat = rng.normal(size=(2, 20, 20))
    shifted = np.roll(feat, (3, 2), axis=(1, 2))
    a = roi_align(feat, (4.3, 5.1, 6.2, 5.5), 4, 2)
    b = roi_align(shifted, (6.3, 8.1, 6.2, 5.5), 4, 2)
    assert np.allclose(a, b, atol=1e-12)


def test_sub_cell_shift_moves_align_but_not_pool():
    feat = np.random.default_rng(9).normal(size=(3, 16, 16))
    roi, moved = (3.0, 4.0, 7.0, 7.0), (3.4, 4.0, 7.0, 7.0)
    assert np.array_equal(roi_pool(feat, roi, 7), roi_pool(feat, moved, 7))
    assert np.max(np.abs(roi_align(feat, roi) - roi_align(feat, moved))) > 1e-3


def test_roi_pool_examples():
    feat = np.arange(2 * 6 * 6, dtype=float).reshape(2, 6, 6)
    assert np.all(roi_pool(np.full((1, 8, 8), 2.5), (1.2, 0.5, 5, 4), 3) == 2.5)
    out = roi_pool(feat, (3, 4, 1, 1), 2)
    assert np.all(out[0] == feat[0, 4, 3]) and np.all(out[1] == feat[1, 4, 3])
    with pytest.raises(ValueError, match="zero cells"):
        roi_pool(feat, (2.2, 2.2, 0.5, 0.5), 2)


def test_roi_align_rejects_bad_arguments():
    with pytest.raises(ValueError):
        roi_align(np.zeros((1, 4, 4)), (0, 0, 0, 1))
    with pytest.raises(ValueError):
        roi_align(np.zeros((1, 4, 4)), (0, 0, 1, 1), out_size=0)


@settings(max_examples=100, deadline=None)
@given(
    st.floats(-50, 50), st.floats(-50, 50), st.floats(1, 100), st.floats(1, 100),
    st.floats(-50, 50), st.floats(-50, 50), st.floats(1, 100), st.floats(1, 100),
)
def test_encode_decode_round_trip(ax, ay, aw, ah, gx, gy, gw, gh):
    anchor, gt = BoxCenter(ax, ay, aw, ah), BoxCenter(gx, gy, gw, gh)
    back = decode_box(anchor, encode_box(anchor, gt))
    for got, want in zip(back, gt):
        assert abs(got - want) <= 1e-6 * max(abs(want), 1.0)
