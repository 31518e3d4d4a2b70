# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the kernels in ``_pykernels``.

Convolutions gather patches (im2col) and scatter gradients (col2im) here
and leave the matrix product to numpy's BLAS. Loop accumulation orders are
fixed, so repeated calls with the same thread count are bit-identical.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, ceil
from libc.stdlib cimport malloc, free

cnp.import_array()

BACKEND = "cython"


def conv_out_size(Py_ssize_t n, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    return (n + 2 * pad - k) // stride + 1


cdef inline void _valid_range(Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t n_in,
                              Py_ssize_t n_out, Py_ssize_t* lo, Py_ssize_t* hi) noexcept nogil:
    # output positions o with 0 <= o*stride - pad + k < n_in
    cdef Py_ssize_t a = pad - k
    cdef Py_ssize_t first = 0
    if a > 0:
        first = (a + stride - 1) // stride
    cdef Py_ssize_t last = (n_in - 1 + pad - k)
    if last < 0:
        lo[0] = 0
        hi[0] = 0
        return
    last = last // stride + 1
    if last > n_out:
        last = n_out
    lo[0] = first
    hi[0] = last if last > first else first


def _im2col(const double[:, :, ::1] xv, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride, Py_ssize_t pad,
            Py_ssize_t ho, Py_ssize_t wo):
    """(C*kh*kw, ho*wo) patch matrix; zero where a tap falls in the padding."""
    cdef Py_ssize_t c = xv.shape[0], h = xv.shape[1], w = xv.shape[2]
    cols = np.zeros((c * kh * kw, ho * wo))
    cdef double[:, ::1] cv = cols
    cdef Py_ssize_t ic, ki, kj, row, oy, ox, y0, y1, x0, x1, iy
    cdef double* dst
    cdef const double* src
    with nogil:
        for ic in range(c):
            for ki in range(kh):
                _valid_range(ki, stride, pad, h, ho, &y0, &y1)
                for kj in range(kw):
                    _valid_range(kj, stride, pad, w, wo, &x0, &x1)
                    row = (ic * kh + ki) * kw + kj
                    if x1 <= x0:
                        continue
                    for oy in range(y0, y1):
                        iy = oy * stride - pad + ki
                        dst = &cv[row, oy * wo]
                        src = &xv[ic, iy, 0] - pad + kj
                        if stride == 1:
                            for ox in range(x0, x1):
                                dst[ox] = src[ox]
                        else:
                            for ox in range(x0, x1):
                                dst[ox] = src[ox * stride]
    return cols


def conv2d_forward(x, weight, bias, Py_ssize_t stride, Py_ssize_t pad):
    xv = np.ascontiguousarray(x, dtype=np.float64)
    wv = np.ascontiguousarray(weight, dtype=np.float64)
    bv = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t c = xv.shape[0], h = xv.shape[1], w = xv.shape[2]
    cdef Py_ssize_t o = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    if wv.shape[1] != c:
        raise ValueError(f"input has {c} channels, filters expect {wv.shape[1]}")
    cdef Py_ssize_t ho = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - kw) // stride + 1
    # gather here, multiply in BLAS
    cols = _im2col(xv, kh, kw, stride, pad, ho, wo)
    out = wv.reshape(o, -1) @ cols
    out += bv[:, None]
    return out.reshape(o, ho, wo)


def conv2d_backward_input(dout, weight, in_shape, Py_ssize_t stride, Py_ssize_t pad):
    dv = np.ascontiguousarray(dout, dtype=np.float64)
    wv = np.ascontiguousarray(weight, dtype=np.float64)
    cdef Py_ssize_t c = in_shape[0], h = in_shape[1], w = in_shape[2]
    cdef Py_ssize_t o = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3]
    cdef Py_ssize_t ho = dv.shape[1], wo = dv.shape[2]
    dcols_arr = np.ascontiguousarray(wv.reshape(o, -1).T @ dv.reshape(o, -1))
    cdef const double[:, ::1] gv = dcols_arr
    dx = np.zeros((c, h, w))
    cdef double[:, :, ::1] xv = dx
    cdef Py_ssize_t ic, ki, kj, row, oy, ox, y0, y1, x0, x1, iy
    cdef double* dp
    cdef const double* gp
    # col2im: scatter-add in (ki, kj) order per input element
    with nogil:
        for ic in range(c):
            for ki in range(kh):
                _valid_range(ki, stride, pad, h, ho, &y0, &y1)
                for kj in range(kw):
                    _valid_range(kj, stride, pad, w, wo, &x0, &x1)
                    row = (ic * kh + ki) * kw + kj
                    if x1 <= x0:
                        continue
                    for oy in range(y0, y1):
                        iy = oy * stride - pad + ki
                        gp = &gv[row, oy * wo]
                        dp = &xv[ic, iy, 0] - pad + kj
                        if stride == 1:
                            for ox in range(x0, x1):
                                dp[ox] += gp[ox]
                        else:
                            for ox in range(x0, x1):
                                dp[ox * stride] += gp[ox]
    return dx


def rasterize_polygon(xs, ys, Py_ssize_t height, Py_ssize_t width):
    cdef const double[::1] xv = np.ascontiguousarray(xs, dtype=np.float64)
    cdef const double[::1] yv = np.ascontiguousarray(ys, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0]
    mask = np.zeros((height, width), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] mv = mask
    cdef double* cross = <double*> malloc(max(n, 1) * sizeof(double))
    if cross == NULL:
        raise MemoryError()
    cdef Py_ssize_t i, e, nxt, m, a, b, j, lo, hi
    cdef double yc, x0, y0, x1, y1, t
    try:
        with nogil:
            for i in range(height):
                yc = i + 0.5
                m = 0
                for e in range(n):
                    nxt = e + 1
                    if nxt == n:
                        nxt = 0
                    x0 = xv[e]
                    y0 = yv[e]
                    x1 = xv[nxt]
                    y1 = yv[nxt]
                    if (y0 > yc) != (y1 > yc):
                        cross[m] = x0 + (yc - y0) * (x1 - x0) / (y1 - y0)
                        m += 1
                # insertion sort; edge counts per row are small
                for a in range(1, m):
                    t = cross[a]
                    b = a - 1
                    while b >= 0 and cross[b] > t:
                        cross[b + 1] = cross[b]
                        b -= 1
                    cross[b + 1] = t
                a = 0
                while a + 1 < m:
                    lo = <Py_ssize_t> ceil(cross[a] - 0.5)
                    hi = <Py_ssize_t> ceil(cross[a + 1] - 0.5)
                    if lo < 0:
                        lo = 0
                    if hi > width:
                        hi = width
                    for j in range(lo, hi):
                        mv[i, j] = 1
                    a += 2
    finally:
        free(cross)
    return mask.view(bool)


cdef inline double _bilinear(const double[:, ::1] plane, double cy, double cx) noexcept nogil:
    cdef Py_ssize_t h = plane.shape[0], w = plane.shape[1]
    if cy < 0.0:
        cy = 0.0
    if cy > h - 1.0:
        cy = h - 1.0
    if cx < 0.0:
        cx = 0.0
    if cx > w - 1.0:
        cx = w - 1.0
    cdef Py_ssize_t y0 = <Py_ssize_t> floor(cy)
    cdef Py_ssize_t x0 = <Py_ssize_t> floor(cx)
    cdef Py_ssize_t y1 = y0 + 1 if y0 + 1 < h else h - 1
    cdef Py_ssize_t x1 = x0 + 1 if x0 + 1 < w else w - 1
    cdef double ly = cy - y0
    cdef double lx = cx - x0
    cdef double top = plane[y0, x0] + lx * (plane[y0, x1] - plane[y0, x0])
    cdef double bot = plane[y1, x0] + lx * (plane[y1, x1] - plane[y1, x0])
    return top + ly * (bot - top)


def roi_align(feat, double x, double y, double w, double h, Py_ssize_t out_size, Py_ssize_t samples):
    cdef const double[:, :, ::1] fv = np.ascontiguousarray(feat, dtype=np.float64)
    cdef Py_ssize_t c = fv.shape[0]
    out = np.empty((c, out_size, out_size))
    cdef double[:, :, ::1] ov = out
    cdef double bin_w = w / out_size
    cdef double bin_h = h / out_size
    cdef Py_ssize_t ch, by, bx, sy, sx, k
    cdef double mean, px, py
    with nogil:
        for ch in range(c):
            for by in range(out_size):
                for bx in range(out_size):
                    mean = 0.0
                    k = 0
                    for sy in range(samples):
                        py = y + (by + (sy + 0.5) / samples) * bin_h
                        for sx in range(samples):
                            px = x + (bx + (sx + 0.5) / samples) * bin_w
                            k += 1
                            mean = mean + (_bilinear(fv[ch], py - 0.5, px - 0.5) - mean) / k
                    ov[ch, by, bx] = mean
    return out


def nms(boxes, scores, double thresh):
    cdef const double[:, ::1] bv = np.ascontiguousarray(np.asarray(boxes, dtype=np.float64).reshape(-1, 4))
    sc = np.asarray(scores, dtype=np.float64)
    cdef Py_ssize_t n = sc.shape[0]
    cdef const cnp.intp_t[::1] order = np.ascontiguousarray(np.lexsort((np.arange(n), -sc)), dtype=np.intp)
    supp = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] sv = supp
    keep = []
    cdef Py_ssize_t a, b, i, j
    cdef double ix1, iy1, ix2, iy2, iw, ih, inter, union, ovr
    for a in range(n):
        i = order[a]
        if sv[i]:
            continue
        keep.append(int(i))
        for b in range(a + 1, n):
            j = order[b]
            if sv[j]:
                continue
            ix1 = max(bv[i, 0], bv[j, 0])
            iy1 = max(bv[i, 1], bv[j, 1])
            ix2 = min(bv[i, 0] + bv[i, 2], bv[j, 0] + bv[j, 2])
            iy2 = min(bv[i, 1] + bv[i, 3], bv[j, 1] + bv[j, 3])
            iw = ix2 - ix1
            ih = iy2 - iy1
            if iw < 0.0:
                iw = 0.0
            if ih < 0.0:
                ih = 0.0
            inter = iw * ih
            union = bv[i, 2] * bv[i, 3] + bv[j, 2] * bv[j, 3] - inter
            ovr = inter / union if union > 0.0 else 0.0
            if ovr > thresh:
                sv[j] = 1
    return keep
