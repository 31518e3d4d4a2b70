"""Pure numpy implementations of the hot kernels.

Every function here has a twin with the same signature in ``_ckernels.pyx``.
Results agree with the compiled versions to rounding; masks and keep-lists
agree exactly.
"""

import numpy as np

BACKEND = "python"


def _pad_chw(x, pad):
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (pad, pad), (pad, pad)))


def conv_out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def conv2d_forward(x, weight, bias, stride, pad):
    """Cross-correlation of a (C, H, W) input with (O, C, KH, KW) filters."""
    c, h, w = x.shape
    o, c_w, kh, kw = weight.shape
    if c != c_w:
        raise ValueError(f"input has {c} channels, filters expect {c_w}")
    ho = conv_out_size(h, kh, stride, pad)
    wo = conv_out_size(w, kw, stride, pad)
    xp = _pad_chw(np.asarray(x, dtype=np.float64), pad)
    out = np.empty((o, ho, wo))
    out[...] = np.asarray(bias, dtype=np.float64)[:, None, None]
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, ki : ki + stride * (ho - 1) + 1 : stride, kj : kj + stride * (wo - 1) + 1 : stride]
            out += np.tensordot(weight[:, :, ki, kj], patch, axes=(1, 0))
    return out


def conv2d_backward_input(dout, weight, in_shape, stride, pad):
    """Gradient of a conv2d_forward output w.r.t. its input."""
    c, h, w = in_shape
    o, _, kh, kw = weight.shape
    _, ho, wo = dout.shape
    dxp = np.zeros((c, h + 2 * pad, w + 2 * pad))
    for ki in range(kh):
        for kj in range(kw):
            dxp[:, ki : ki + stride * (ho - 1) + 1 : stride, kj : kj + stride * (wo - 1) + 1 : stride] += np.tensordot(
                weight[:, :, ki, kj], dout, axes=(0, 0)
            )
    if pad:
        return dxp[:, pad:-pad, pad:-pad].copy()
    return dxp


def rasterize_polygon(xs, ys, height, width):
    """Even-odd fill of one closed polygon, sampled at pixel centers."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0, y0 = xs, ys
    x1, y1 = np.roll(xs, -1), np.roll(ys, -1)
    mask = np.zeros((height, width), dtype=bool)
    centers_x = np.arange(width) + 0.5
    # rows are processed in blocks to bound the (rows, edges, cols) temporary
    block = max(1, 4_000_000 // max(1, len(xs) * width))
    for start in range(0, height, block):
        yc = np.arange(start, min(height, start + block))[:, None] + 0.5
        crosses = (y0 > yc) != (y1 > yc)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
        xint = np.where(crosses, xint, -np.inf)
        count = (xint[:, :, None] > centers_x[None, None, :]).sum(axis=1)
        mask[start : start + len(yc)] = (count % 2) == 1
    return mask


def _bilinear(plane, cy, cx):
    h, w = plane.shape
    cy = min(max(cy, 0.0), h - 1.0)
    cx = min(max(cx, 0.0), w - 1.0)
    y0 = int(np.floor(cy))
    x0 = int(np.floor(cx))
    y1 = min(y0 + 1, h - 1)
    x1 = min(x0 + 1, w - 1)
    ly = cy - y0
    lx = cx - x0
    top = plane[y0, x0] + lx * (plane[y0, x1] - plane[y0, x0])
    bot = plane[y1, x0] + lx * (plane[y1, x1] - plane[y1, x0])
    return top + ly * (bot - top)


def roi_align(feat, x, y, w, h, out_size, samples):
    """RoIAlign over a (C, H, W) map for one box in feature coordinates."""
    feat = np.asarray(feat, dtype=np.float64)
    c = feat.shape[0]
    out = np.empty((c, out_size, out_size))
    bin_w = w / out_size
    bin_h = h / out_size
    for ch in range(c):
        plane = feat[ch]
        for by in range(out_size):
            for bx in range(out_size):
                mean = 0.0
                k = 0
                for sy in range(samples):
                    py = y + (by + (sy + 0.5) / samples) * bin_h
                    for sx in range(samples):
                        px = x + (bx + (sx + 0.5) / samples) * bin_w
                        k += 1
                        mean += (_bilinear(plane, py - 0.5, px - 0.5) - mean) / k
                out[ch, by, bx] = mean
    return out


def nms(boxes, scores, thresh):
    """Greedy NMS on (N, 4) [x, y, w, h] boxes; returns kept indices."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64)
    n = len(scores)
    order = np.lexsort((np.arange(n), -scores))
    x1 = boxes[:, 0]
    y1 = boxes[:, 1]
    x2 = x1 + boxes[:, 2]
    y2 = y1 + boxes[:, 3]
    areas = boxes[:, 2] * boxes[:, 3]
    keep = []
    while order.size:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        iw = np.maximum(0.0, np.minimum(x2[i], x2[rest]) - np.maximum(x1[i], x1[rest]))
        ih = np.maximum(0.0, np.minimum(y2[i], y2[rest]) - np.maximum(y1[i], y1[rest]))
        inter = iw * ih
        union = areas[i] + areas[rest] - inter
        with np.errstate(divide="ignore", invalid="ignore"):
            ovr = np.where(union > 0, inter / union, 0.0)
        order = rest[ovr <= thresh]
    return keep
