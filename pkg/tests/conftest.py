import json

import numpy as np
import pytest

from fitroom.imaging import write_png
from fitroom.nst import reference_extractor


def rect(x0, y0, x1, y1):
    return [x0, y0, x1, y0, x1, y1, x0, y1]


def make_portrait(height, width, seed):
    """Smooth synthetic 'portrait' with a few flat garment regions."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width]
    base = np.stack(
        [0.3 + 0.4 * xx / width, 0.2 + 0.5 * yy / height, 0.5 + 0.3 * np.sin(xx / 5.0 + seed)],
        axis=-1,
    )
    base += rng.uniform(-0.05, 0.05, size=base.shape)
    return np.clip(base, 0.0, 1.0)


def make_texture(height, width, seed):
    yy, xx = np.mgrid[0:height, 0:width]
    tex = np.stack(
        [
            0.1 + 0.8 * (np.sin(yy * (1.1 + seed)) > 0),
            0.5 + 0.4 * np.cos(xx * (0.9 + 0.3 * seed)),
            0.2 + 0.6 * (((xx // 4) + (yy // 4) + seed) % 2),
        ],
        axis=-1,
    )
    return np.clip(tex, 0.0, 1.0)


# three fixture portraits: (height, width, [(annotation id, category, polygon)])
PORTRAITS = [
    (60, 40, [(0, 2, rect(8, 30, 32, 34)), (1, 5, rect(6, 10, 34, 29)), (2, 8, rect(10, 36, 30, 58))]),
    (48, 48, [(3, 5, [10, 6, 38, 6, 42, 30, 6, 30]), (4, 1, rect(30, 32, 46, 46))]),
    (40, 56, [(5, 5, rect(4, 4, 26, 36)), (6, 1, [30, 10, 52, 10, 41, 36]), (7, 2, rect(4, 20, 26, 23))]),
]


def annotation_doc(image_id, entries, height=None, width=None):
    anns = []
    for ann_id, cat, poly in entries:
        xs, ys = poly[0::2], poly[1::2]
        anns.append(
            {
                "image_id": image_id,
                "id": ann_id,
                "bbox": [min(xs), min(ys), max(xs) - min(xs), max(ys) - min(ys)],
                "category_id": cat,
                "iscrowd": 0,
                "segmentation": [poly],
            }
        )
    doc = {"annotations": anns}
    if height is not None:
        doc["images"] = [{"id": image_id, "height": height, "width": width}]
    return doc


@pytest.fixture
def portrait_files(tmp_path):
    """Write the fixture portraits, annotations and two textures; return paths."""
    out = []
    for n, (h, w, entries) in enumerate(PORTRAITS):
        img = tmp_path / f"portrait_{n}.png"
        write_png(img, make_portrait(h, w, n))
        ann = tmp_path / f"portrait_{n}.json"
        ann.write_text(json.dumps(annotation_doc(100 + n, entries, h, w)))
        out.append({"image": img, "annotations": ann, "image_id": 100 + n, "entries": entries})
    for k in range(2):
        write_png(tmp_path / f"texture_{k}.png", make_texture(32, 32, k))
    return out


@pytest.fixture(scope="session")
def ref_extractor():
    return reference_extractor(0)


# acceptance criteria outcomes, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
