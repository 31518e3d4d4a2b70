"""Mask-guided merge of a stylized image into the original, and the tiled
copy-paste baseline."""

from dataclasses import dataclass
import warnings

import numpy as np

from .annotations import ImageTensor, bbox_from_mask


@dataclass
class CompositeJob:
    original: ImageTensor
    stylized: ImageTensor
    mask: np.ndarray
    feather_radius: int = 0


def feather_alpha(mask, radius):
    """Blend weights: the mask after ``radius`` passes of a 3x3 mean filter.

    Borders replicate the edge value.
    """
    alpha = np.asarray(mask, dtype=np.float64)
    for _ in range(radius):
        p = np.pad(alpha, 1, mode="edge")
        acc = np.zeros_like(alpha)
        for di in range(3):
            for dj in range(3):
                acc += p[di : di + alpha.shape[0], dj : dj + alpha.shape[1]]
        alpha = acc / 9.0
    return alpha


def _blend(original, stylized, mask, feather_radius):
    if original.shape != stylized.shape or original.shape[:2] != mask.shape:
        raise ValueError(f"shape mismatch: original {original.shape}, stylized {stylized.shape}, mask {mask.shape}")
    if feather_radius < 0:
        raise ValueError("feather_radius must be >= 0")
    if feather_radius == 0:
        return np.where(mask[..., None], stylized, original)
    alpha = feather_alpha(mask, feather_radius)[..., None]
    # lerp form: exact wherever the two images already agree
    mixed = original + alpha * (stylized - original)
    return np.where(alpha == 0.0, original, np.where(alpha == 1.0, stylized, mixed))


def composite(job):
    """Take stylized pixels inside the mask and original pixels outside it."""
    mask = np.asarray(job.mask, dtype=bool)
    if job.original.normalized != job.stylized.normalized:
        raise ValueError("original and stylized images must share normalization state")
    out = _blend(job.original.values, job.stylized.values, mask, job.feather_radius)
    return ImageTensor(out, job.original.mean, job.original.std)


def copy_paste(original, texture, mask):
    """Tile ``texture`` from the mask's top-left bounding-box corner into the mask."""
    mask = np.asarray(mask, dtype=bool)
    tex = texture.values
    if tex.shape[0] == 0 or tex.shape[1] == 0:
        raise ValueError("texture is empty")
    if mask.shape != original.values.shape[:2]:
        raise ValueError(f"mask {mask.shape} does not match image {original.values.shape[:2]}")
    if not mask.any():
        warnings.warn("empty mask: image returned unchanged", stacklevel=2)
        return ImageTensor(original.values.copy(), original.mean, original.std)
    x0, y0, _, _ = bbox_from_mask(mask)
    h, w = mask.shape
    rows = (np.arange(h) - y0) % tex.shape[0]
    cols = (np.arange(w) - x0) % tex.shape[1]
    tiled = tex[rows[:, None], cols[None, :]]
    out = np.where(mask[..., None], tiled, original.values)
    return ImageTensor(out, original.mean, original.std)
