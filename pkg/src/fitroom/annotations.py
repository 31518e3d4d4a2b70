"""ModaNet / COCO-style annotation ingestion and image preprocessing.

Annotation documents carry an ``annotations`` array whose entries hold
``image_id``, ``id``, ``bbox`` ([x, y, w, h] in pixels), ``category_id``,
``iscrowd`` and ``segmentation`` (a list of flat ``[x0, y0, x1, y1, ...]``
polygons). Optional ``images`` entries supply raster sizes and optional
``categories`` entries override the category table.
"""

from collections import defaultdict
from dataclasses import dataclass, field, replace
import json
import math
import warnings

import numpy as np

from . import kernels
from .imaging import resize_bilinear


class AnnotationError(ValueError):
    pass


class AnnotationParseError(AnnotationError):
    """Document is not well-formed; carries the byte offset, line and column."""

    def __init__(self, msg, pos=None, lineno=None, colno=None):
        where = f" (line {lineno}, column {colno}, byte {pos})" if lineno is not None else ""
        super().__init__(msg + where)
        self.pos = pos
        self.lineno = lineno
        self.colno = colno


class AnnotationValidationError(AnnotationError):
    def __init__(self, annotation_id, msg):
        super().__init__(f"annotation {annotation_id}: {msg}")
        self.annotation_id = annotation_id


DEFAULT_NUM_CATEGORIES = 13


class CategoryTable(dict):
    """Map of category id to name. Ids must run contiguously from 1."""

    def __init__(self, entries):
        super().__init__(sorted((int(k), str(v)) for k, v in dict(entries).items()))
        if list(self) != list(range(1, len(self) + 1)):
            raise ValueError(f"category ids must be contiguous from 1, got {sorted(self)}")

    @classmethod
    def default(cls):
        # only id 2 has a name we can vouch for; load a table file for the rest
        names = {i: f"category_{i}" for i in range(1, DEFAULT_NUM_CATEGORIES + 1)}
        names[2] = "belt"
        return cls(names)

    @classmethod
    def load(cls, path):
        """Read ``id<TAB>name`` lines; blank lines and ``#`` comments are skipped."""
        entries = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                try:
                    key, name = line.split("\t", 1)
                    key = int(key)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: expected 'id<TAB>name'") from None
                if key in entries:
                    raise ValueError(f"{path}:{lineno}: duplicate category id {key}")
                entries[key] = name.strip()
        return cls(entries)

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for key, name in self.items():
                fh.write(f"{key}\t{name}\n")


@dataclass
class AnnotationRecord:
    image_id: int
    annotation_id: int
    bbox: tuple
    category_id: int
    iscrowd: int = 0
    segmentation: list = field(default_factory=list)

    def to_json(self):
        return {
            "image_id": self.image_id,
            "id": self.annotation_id,
            "bbox": list(self.bbox),
            "category_id": self.category_id,
            "iscrowd": self.iscrowd,
            "segmentation": [list(p) for p in self.segmentation],
        }


@dataclass
class AnnotationFile:
    records: list
    images: dict
    categories: CategoryTable

    def by_image(self):
        return group_by_image(self.records)


def group_by_image(records):
    groups = defaultdict(list)
    for rec in records:
        groups[rec.image_id].append(rec)
    return dict(groups)


_REQUIRED = ("image_id", "id", "bbox", "category_id", "segmentation")


def _as_number(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError
    return v


def _record_issues(entry, categories):
    """Yield (annotation_id, message) for everything wrong with one entry."""
    ann_id = entry.get("id") if isinstance(entry, dict) else None
    if not isinstance(entry, dict):
        yield ann_id, "entry is not an object"
        return
    for key in _REQUIRED:
        if key not in entry:
            yield ann_id, f"missing field '{key}'"
    if "iscrowd" not in entry and "iscrowded" not in entry:
        yield ann_id, "missing field 'iscrowd'"
    bbox = entry.get("bbox")
    if bbox is not None:
        try:
            if len(bbox) != 4:
                raise TypeError
            x, y, w, h = (_as_number(v) for v in bbox)
            if not all(math.isfinite(v) for v in (x, y, w, h)):
                raise TypeError
        except TypeError:
            yield ann_id, f"bbox must be four numbers, got {bbox!r}"
        else:
            if w <= 0 or h <= 0:
                yield ann_id, f"bbox width and height must be positive, got {bbox!r}"
    cat = entry.get("category_id")
    if cat is not None and cat not in categories:
        yield ann_id, f"unknown category_id {cat!r}"
    crowd = entry.get("iscrowd", entry.get("iscrowded"))
    if crowd is not None and crowd not in (0, 1):
        yield ann_id, f"iscrowd must be 0 or 1, got {crowd!r}"
    seg = entry.get("segmentation")
    if seg is not None:
        if not isinstance(seg, list):
            yield ann_id, "segmentation must be a list of polygons"
            return
        for n, poly in enumerate(seg):
            if not isinstance(poly, list):
                yield ann_id, f"polygon {n} is not a coordinate list"
                continue
            if len(poly) % 2:
                yield ann_id, f"polygon {n} has odd coordinate count {len(poly)}"
            elif len(poly) < 6:
                yield ann_id, f"polygon {n} has fewer than 3 vertices"
            try:
                ok = all(math.isfinite(_as_number(v)) and v >= 0 for v in poly)
            except TypeError:
                ok = False
            if not ok:
                yield ann_id, f"polygon {n} has non-numeric, non-finite or negative coordinates"


def _load_json(data):
    if isinstance(data, (bytes, bytearray)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise AnnotationParseError(f"document is not UTF-8: {exc.reason}", pos=exc.start) from None
    else:
        text = data
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        byte_pos = len(text[: exc.pos].encode("utf-8"))
        raise AnnotationParseError(f"malformed annotation document: {exc.msg}", byte_pos, exc.lineno, exc.colno) from None
    if isinstance(doc, list):
        doc = {"annotations": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("annotations"), list):
        raise AnnotationParseError("document has no 'annotations' array")
    return doc


def _doc_categories(doc, categories):
    if categories is not None:
        return categories
    if isinstance(doc.get("categories"), list) and doc["categories"]:
        return CategoryTable({c["id"]: c.get("name", f"category_{c['id']}") for c in doc["categories"]})
    return CategoryTable.default()


def validation_issues(data, categories=None):
    """Every validation problem in a document, as ``(annotation_id, message)`` pairs."""
    doc = _load_json(data)
    table = _doc_categories(doc, categories)
    issues = []
    for entry in doc["annotations"]:
        issues.extend(_record_issues(entry, table))
    return issues


def _bbox_mismatch(rec):
    xs = [v for poly in rec.segmentation for v in poly[0::2]]
    ys = [v for poly in rec.segmentation for v in poly[1::2]]
    if not xs:
        return False
    x, y, w, h = rec.bbox
    tol = 1.0
    return min(xs) < x - tol or min(ys) < y - tol or max(xs) > x + w + tol or max(ys) > y + h + tol


def load_annotation_document(data, categories=None):
    """Parse and validate a full document into an :class:`AnnotationFile`."""
    doc = _load_json(data)
    table = _doc_categories(doc, categories)
    records = []
    for entry in doc["annotations"]:
        for ann_id, msg in _record_issues(entry, table):
            raise AnnotationValidationError(ann_id, msg)
        rec = AnnotationRecord(
            image_id=entry["image_id"],
            annotation_id=entry["id"],
            bbox=tuple(entry["bbox"]),
            category_id=entry["category_id"],
            iscrowd=entry.get("iscrowd", entry.get("iscrowded")),
            segmentation=[list(p) for p in entry["segmentation"]],
        )
        if _bbox_mismatch(rec):
            warnings.warn(f"annotation {rec.annotation_id}: bbox does not bound its polygons", stacklevel=2)
        records.append(rec)
    images = {}
    for img in doc.get("images") or []:
        if isinstance(img, dict) and "id" in img:
            images[img["id"]] = dict(img)
    return AnnotationFile(records, images, table)


def parse_annotations(data, categories=None):
    """Parse annotation-file bytes (or text) into validated records."""
    return load_annotation_document(data, categories).records


def read_annotation_file(path, categories=None):
    with open(path, "rb") as fh:
        return load_annotation_document(fh.read(), categories)


def serialize_annotations(records, images=None, categories=None):
    """Inverse of :func:`parse_annotations`; returns UTF-8 JSON bytes."""
    doc = {"annotations": [r.to_json() for r in records]}
    if images:
        doc["images"] = list(images.values())
    if categories is not None:
        doc["categories"] = [{"id": k, "name": v} for k, v in categories.items()]
    return json.dumps(doc).encode("utf-8")


def _shoelace(xs, ys):
    return 0.5 * abs(float(np.dot(xs, np.roll(ys, -1)) - np.dot(ys, np.roll(xs, -1))))


def rasterize(polygons, height, width):
    """Boolean (height, width) mask of pixels whose centers fall inside any polygon.

    Each polygon is filled with the even-odd rule at pixel centers
    ``(col + 0.5, row + 0.5)``; the result is the union over polygons.
    Zero-area polygons contribute nothing and raise a warning.
    """
    if height <= 0 or width <= 0:
        raise ValueError("mask dimensions must be positive")
    mask = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        coords = np.asarray(poly, dtype=np.float64)
        if coords.size % 2 or coords.size < 6:
            raise ValueError(f"polygon needs an even number (>= 6) of coordinates, got {coords.size}")
        xs, ys = coords[0::2], coords[1::2]
        if _shoelace(xs, ys) == 0.0:
            warnings.warn("degenerate polygon with zero area skipped", stacklevel=2)
            continue
        mask |= kernels.rasterize_polygon(xs, ys, height, width)
    return mask


def bbox_from_mask(mask):
    """Tightest [x, y, w, h] box around the set pixels of ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    if rows.size == 0:
        raise ValueError("empty mask")
    cols = np.flatnonzero(mask.any(axis=0))
    return [int(cols[0]), int(rows[0]), int(cols[-1] - cols[0] + 1), int(rows[-1] - rows[0] + 1)]


@dataclass
class ImageTensor:
    """(H, W, 3) RGB raster plus the channel normalization applied to it, if any."""

    values: np.ndarray
    mean: tuple = None
    std: tuple = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[2] != 3:
            raise ValueError(f"image must be (H, W, 3), got {self.values.shape}")
        if self.values.shape[0] == 0 or self.values.shape[1] == 0:
            raise ValueError("image dimensions must be positive")
        if (self.mean is None) != (self.std is None):
            raise ValueError("mean and std must be given together")
        if not self.normalized and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("unnormalized image values must lie in [0, 1]")

    @property
    def normalized(self):
        return self.mean is not None

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def value_range(self):
        """Per-channel (low, high) bounds corresponding to raw [0, 1] pixels."""
        if not self.normalized:
            return np.zeros(3), np.ones(3)
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        return (0.0 - mean) / std, (1.0 - mean) / std

    def denormalized(self):
        if not self.normalized:
            return self
        raw = self.values * np.asarray(self.std) + np.asarray(self.mean)
        return ImageTensor(np.clip(raw, 0.0, 1.0))


@dataclass(frozen=True)
class PadRecord:
    """How :func:`preprocess` placed the source image in the output frame."""

    pad_top: int
    pad_bottom: int
    pad_left: int
    pad_right: int
    scale: float
    src_height: int
    src_width: int

    def map_xy(self, x, y):
        return (x + self.pad_left) * self.scale, (y + self.pad_top) * self.scale

    def map_record(self, rec):
        x, y, w, h = rec.bbox
        nx, ny = self.map_xy(x, y)
        polys = []
        for poly in rec.segmentation:
            out = []
            for px, py in zip(poly[0::2], poly[1::2]):
                out.extend(self.map_xy(px, py))
            polys.append(out)
        return replace(rec, bbox=(nx, ny, w * self.scale, h * self.scale), segmentation=polys)


def preprocess(image, target=256):
    """Zero-pad to a square along the short axis, then resize to target x target.

    The odd remainder of the padding goes to the bottom / right.
    """
    if image.normalized:
        raise ValueError("preprocess expects an unnormalized image")
    h, w = image.height, image.width
    side = max(h, w)
    top = (side - h) // 2
    left = (side - w) // 2
    pad = PadRecord(top, side - h - top, left, side - w - left, target / side, h, w)
    square = np.zeros((side, side, 3))
    square[top : top + h, left : left + w] = image.values
    resized = resize_bilinear(square, target, target)
    return ImageTensor(np.clip(resized, 0.0, 1.0)), pad


def normalize_channels(image, mean, std):
    """Per-channel ``(x - mean) / std``; the constants are recorded on the result."""
    if image.normalized:
        raise ValueError("image is already normalized")
    mean = tuple(float(m) for m in mean)
    std = tuple(float(s) for s in std)
    if len(mean) != 3 or len(std) != 3:
        raise ValueError("mean and std need three components")
    if min(std) <= 0:
        raise ValueError("std components must be positive")
    values = (image.values - np.asarray(mean)) / np.asarray(std)
    return ImageTensor(values, mean, std)


def hflip(image, records=()):
    """Mirror an image left-right together with its annotations."""
    width = image.width
    flipped = ImageTensor(image.values[:, ::-1].copy(), image.mean, image.std)
    out = []
    for rec in records:
        x, y, w, h = rec.bbox
        polys = []
        for poly in rec.segmentation:
            p = list(poly)
            p[0::2] = [width - v for v in poly[0::2]]
            polys.append(p)
        out.append(replace(rec, bbox=(width - x - w, y, w, h), segmentation=polys))
    return flipped, out


def split_dataset(image_ids, sizes=(20000, 2000, 1000), seed=0):
    """Seeded shuffle of ``image_ids`` cut into consecutive splits of ``sizes``."""
    ids = sorted(set(image_ids))
    if sum(sizes) > len(ids):
        raise ValueError(f"requested {sum(sizes)} images but only {len(ids)} available")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    splits = []
    start = 0
    for n in sizes:
        splits.append(shuffled[start : start + n])
        start += n
    return splits
