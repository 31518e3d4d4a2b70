"""Compiled and numpy kernels must agree; the numpy ones must match naive loops."""

import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fitroom import _pykernels, kernels

BACKENDS = kernels.available_backends()


def naive_conv(x, w, b, stride, pad):
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((c, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((o, ho, wo))
    for oc in range(o):
        for i in range(ho):
            for j in range(wo):
                window = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[oc, i, j] = np.sum(window * w[oc]) + b[oc]
    return out


def test_compiled_backend_is_selected_when_built():
    forced = os.environ.get("FITROOM_PURE_PYTHON", "") not in ("", "0")
    if "cython" in BACKENDS and not forced:
        assert kernels.BACKEND == "cython"
    else:
        assert kernels.BACKEND == "python"


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("shape", [(3, 8, 5, 5, 3, 1, 1), (2, 3, 9, 7, 3, 2, 0), (4, 2, 10, 11, 5, 3, 2), (1, 1, 3, 3, 1, 1, 0)])
def test_conv_forward_matches_sliding_window(name, shape):
    c, o, h, w, k, stride, pad = shape
    rng = np.random.default_rng(sum(shape))
    x = rng.normal(size=(c, h, w))
    wt = rng.normal(size=(o, c, k, k))
    b = rng.normal(size=o)
    got = BACKENDS[name].conv2d_forward(x, wt, b, stride, pad)
    np.testing.assert_allclose(got, naive_conv(x, wt, b, stride, pad), rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
@pytest.mark.parametrize("shape", [(3, 8, 5, 5, 3, 1, 1), (2, 3, 9, 7, 3, 2, 0), (4, 2, 10, 11, 5, 3, 2)])
def test_conv_backward_is_adjoint_of_forward(name, shape):
    # <conv(x) - b, g> == <x, conv^T g> for every x, g
    c, o, h, w, k, stride, pad = shape
    rng = np.random.default_rng(7 + sum(shape))
    x = rng.normal(size=(c, h, w))
    wt = rng.normal(size=(o, c, k, k))
    zero = np.zeros(o)
    y = BACKENDS[name].conv2d_forward(x, wt, zero, stride, pad)
    g = rng.normal(size=y.shape)
    dx = BACKENDS[name].conv2d_backward_input(g, wt, x.shape, stride, pad)
    assert np.isclose(np.sum(y * g), np.sum(x * dx), rtol=1e-12)


def test_backends_agree_on_random_inputs():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    c, p = BACKENDS["cython"], BACKENDS["python"]
    rng = np.random.default_rng(3)
    x = rng.normal(size=(8, 16, 16))
    w = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    np.testing.assert_allclose(c.conv2d_forward(x, w, b, 1, 1), p.conv2d_forward(x, w, b, 1, 1), atol=1e-12)
    feat = rng.normal(size=(3, 12, 12))
    np.testing.assert_allclose(c.roi_align(feat, 1.3, 2.7, 6.1, 4.4, 5, 2), p.roi_align(feat, 1.3, 2.7, 6.1, 4.4, 5, 2), atol=1e-13)
    boxes = np.column_stack([rng.uniform(0, 50, (60, 2)), rng.uniform(1, 20, (60, 2))])
    scores = rng.uniform(size=60)
    assert c.nms(boxes, scores, 0.4) == p.nms(boxes, scores, 0.4)


def test_conv_forward_is_repeatable_bit_for_bit():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 16, 16))
    w = rng.normal(size=(16, 8, 3, 3))
    b = rng.normal(size=16)
    first = kernels.conv2d_forward(x, w, b, 1, 1)
    assert np.array_equal(first, kernels.conv2d_forward(x, w, b, 1, 1))


polygons = st.lists(
    st.tuples(st.floats(0, 20, allow_nan=False), st.floats(0, 20, allow_nan=False)), min_size=3, max_size=9
)


@settings(max_examples=80, deadline=None)
@given(polygons)
def test_polygon_fill_identical_across_backends(pts):
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    ref = _pykernels.rasterize_polygon(xs, ys, 22, 21)
    for mod in BACKENDS.values():
        assert np.array_equal(mod.rasterize_polygon(xs, ys, 22, 21), ref)
