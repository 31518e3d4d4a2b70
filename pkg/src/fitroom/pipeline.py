"""End-to-end restyling of selected fashion items in one portrait.

Ground-truth polygons (or externally produced mask PNGs) stand in for a
trained segmentation model. Each selected category is stylized from the
whole preprocessed image and merged back under its mask; merges are applied
in ascending category id, so on overlapping masks the higher id wins.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
import json
import logging
import os

import numpy as np

from .annotations import ImageTensor, bbox_from_mask, normalize_channels, preprocess, rasterize, read_annotation_file
from .compositor import CompositeJob, composite
from .evaluation import Detection, dump_detections
from .imaging import read_mask_png, read_png, write_mask_png, write_png
from .nst import NstConfig, load_extractor, optimize

log = logging.getLogger(__name__)


class ManifestError(ValueError):
    pass


def reference_weights_path():
    return str(resources.files("fitroom") / "data" / "reference_extractor.nstw")


def thread_cap():
    try:
        return max(1, int(os.environ.get("FITROOM_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class Selection:
    category_id: int
    style: str


@dataclass
class RunManifest:
    content: str
    selections: list
    output_dir: str
    annotations: str = None
    image_id: int = None
    masks_dir: str = None
    size: int = 256
    feather_radius: int = 0
    weights: str = None
    normalize: dict = None
    nst: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            try:
                raw = json.loads(fh.read())
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}: malformed manifest ({exc})") from None
        if not isinstance(raw, dict):
            raise ManifestError(f"{path}: manifest must be a JSON object")
        return cls.from_dict(raw, base_dir=os.path.dirname(os.path.abspath(path)))

    @classmethod
    def from_dict(cls, raw, base_dir="."):
        raw = dict(raw)
        sels = raw.pop("selections", None)
        if sels is None:
            cats = raw.pop("categories", [])
            style = raw.pop("style", None)
            styles = raw.pop("styles", None) or [style] * len(cats)
            if len(styles) != len(cats) or (cats and None in styles):
                raise ManifestError("give one style per selected category")
            sels = [{"category_id": c, "style": s} for c, s in zip(cats, styles)]
        known = {f.name for f in fields(cls)} - {"selections", "base_dir"}
        unknown = set(raw) - known
        if unknown:
            raise ManifestError(f"unknown manifest fields: {sorted(unknown)}")
        for key in ("content", "output_dir"):
            if key not in raw:
                raise ManifestError(f"manifest is missing '{key}'")
        try:
            selections = [Selection(int(s["category_id"]), s["style"]) for s in sels]
        except (KeyError, TypeError, ValueError):
            raise ManifestError("each selection needs 'category_id' and 'style'") from None
        if len({s.category_id for s in selections}) != len(selections):
            raise ManifestError("a category may be selected only once")
        return cls(selections=selections, base_dir=base_dir, **raw)

    def path(self, p):
        return p if p is None or os.path.isabs(p) else os.path.join(self.base_dir, p)


@dataclass
class RunResult:
    preprocessed: ImageTensor
    image: ImageTensor
    masks: dict
    stylized: dict
    before: list
    after: list


def _category_masks(manifest, pad, size):
    wanted = [s.category_id for s in manifest.selections]
    masks = {}
    masks_dir = manifest.path(manifest.masks_dir)
    if masks_dir:
        for cat in wanted:
            p = os.path.join(masks_dir, f"mask_{cat}.png")
            if os.path.exists(p):
                m = read_mask_png(p)
                if m.shape != (size, size):
                    raise ManifestError(f"{p}: mask is {m.shape}, expected {(size, size)}")
                masks[cat] = m
    missing = [c for c in wanted if c not in masks]
    if not missing:
        return masks
    if not manifest.annotations:
        raise ManifestError(f"no mask for categories {missing} and no annotation file given")
    ann = read_annotation_file(manifest.path(manifest.annotations))
    by_image = ann.by_image()
    image_id = manifest.image_id
    if image_id is None:
        if len(by_image) != 1:
            raise ManifestError(f"annotation file covers {len(by_image)} images; set 'image_id'")
        image_id = next(iter(by_image))
    records = by_image.get(image_id, [])
    available = sorted({r.category_id for r in records})
    absent = [c for c in missing if c not in available]
    if absent:
        raise ManifestError(f"categories {absent} not annotated in image {image_id}; available: {available}")
    for cat in missing:
        polys = [p for r in records if r.category_id == cat for p in pad.map_record(r).segmentation]
        masks[cat] = rasterize(polys, size, size)
    return masks


def run_manifest(manifest, write=True):
    """Run the restyling pipeline; returns a :class:`RunResult`."""
    raw = ImageTensor(read_png(manifest.path(manifest.content)))
    pre, pad = preprocess(raw, manifest.size)
    masks = _category_masks(manifest, pad, manifest.size)
    extractor = load_extractor(manifest.path(manifest.weights) or reference_weights_path())
    cfg = NstConfig(**manifest.nst)
    out_dir = manifest.path(manifest.output_dir)

    def stylize(sel):
        style_img, _ = preprocess(ImageTensor(read_png(manifest.path(sel.style))), manifest.size)
        content_img = pre
        if manifest.normalize:
            mean, std = manifest.normalize["mean"], manifest.normalize["std"]
            content_img = normalize_channels(pre, mean, std)
            style_img = normalize_channels(style_img, mean, std)
        result = optimize(content_img, style_img, extractor, cfg)
        if write:
            result.write(os.path.join(out_dir, f"nst_{sel.category_id}"))
        stylized = result.image.denormalized()
        return sel.category_id, stylized

    selections = sorted(manifest.selections, key=lambda s: s.category_id)
    workers = min(thread_cap(), max(1, len(selections)))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        stylized = dict(pool.map(stylize, selections))

    image = pre
    for sel in selections:
        image = composite(CompositeJob(image, stylized[sel.category_id], masks[sel.category_id], manifest.feather_radius))

    before, after = [], []
    for sel in selections:
        if masks[sel.category_id].any():
            box = bbox_from_mask(masks[sel.category_id])
            image_id = manifest.image_id if manifest.image_id is not None else 0
            # no detector in the loop: both dumps carry placeholder scores for re-scoring
            before.append(Detection(image_id, sel.category_id, box, 1.0))
            after.append(Detection(image_id, sel.category_id, box, 1.0))

    if write:
        os.makedirs(out_dir, exist_ok=True)
        write_png(os.path.join(out_dir, "preprocessed.png"), pre.values)
        write_png(os.path.join(out_dir, "composite.png"), image.values)
        for cat, m in masks.items():
            write_mask_png(os.path.join(out_dir, f"mask_{cat}.png"), m)
        for cat, s in stylized.items():
            write_png(os.path.join(out_dir, f"stylized_{cat}.png"), s.values)
        dump_detections(os.path.join(out_dir, "detections_before.json"), before)
        dump_detections(os.path.join(out_dir, "detections_after.json"), after)
    return RunResult(pre, image, masks, stylized, before, after)


def outside_masks_identical(result):
    """True when every pixel outside all selected masks equals the preprocessed input."""
    union = np.zeros(result.preprocessed.values.shape[:2], dtype=bool)
    for m in result.masks.values():
        union |= m
    return bool(np.array_equal(result.image.values[~union], result.preprocessed.values[~union]))
