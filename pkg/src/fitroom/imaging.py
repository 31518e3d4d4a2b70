"""Raster helpers shared across modules: bilinear resize and PNG I/O."""

import numpy as np
from PIL import Image


def _axis_lerp(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def resize_bilinear(arr, out_h, out_w):
    """Resize the first two axes of ``arr`` with half-pixel-center bilinear sampling.

    Uses the ``a + t * (b - a)`` form, so constant regions stay bit-exact and
    a same-size resize is the identity.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    lo, hi, t = _axis_lerp(arr.shape[0], out_h)
    t = t.reshape((-1,) + (1,) * (arr.ndim - 1))
    rows = arr[lo] + t * (arr[hi] - arr[lo])
    lo, hi, t = _axis_lerp(arr.shape[1], out_w)
    t = t.reshape((1, -1) + (1,) * (arr.ndim - 2))
    return rows[:, lo] + t * (rows[:, hi] - rows[:, lo])


def read_png(path):
    """Decode an image to an (H, W, 3) float array in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def to_uint8(values):
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, values):
    """Encode an (H, W, 3) array in [0, 1] as 8-bit RGB PNG."""
    Image.fromarray(to_uint8(values), mode="RGB").save(path, format="PNG")


def read_mask_png(path):
    with Image.open(path) as im:
        return np.asarray(im.convert("L")) > 127


def write_mask_png(path, mask):
    Image.fromarray(np.asarray(mask, dtype=bool)).convert("1").save(path, format="PNG")
