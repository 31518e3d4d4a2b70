"""Command-line entry points.

Exit codes: 0 success, 1 validation or domain failure, 2 I/O failure.
"""

import argparse
import json
import logging
import os
import sys
import warnings

import numpy as np

from . import __version__
from .annotations import AnnotationError, CategoryTable, ImageTensor, preprocess, rasterize, read_annotation_file, validation_issues
from .compositor import CompositeJob, composite, copy_paste
from .evaluation import asdr, correspond_items, evaluate_map, load_detections
from .imaging import read_mask_png, read_png, write_mask_png, write_png
from .nst import ExtractorError, NonFiniteLoss, NstConfig, load_extractor, optimize
from .pipeline import ManifestError, RunManifest, outside_masks_identical, reference_weights_path, run_manifest

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2


def _err(msg):
    print(f"fitroom: {msg}", file=sys.stderr)


def _categories(args):
    return CategoryTable.load(args.categories) if getattr(args, "categories", None) else None


def cmd_validate(args):
    with open(args.annotations, "rb") as fh:
        data = fh.read()
    table = _categories(args)
    issues = validation_issues(data, table)
    if issues:
        for ann_id, msg in issues:
            print(f"annotation {ann_id}: {msg}", file=sys.stderr)
        print(f"{len(issues)} problems found")
        return EXIT_DOMAIN
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ann = read_annotation_file(args.annotations, table)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    print(f"{len(ann.records)} annotations, {len(ann.by_image())} images")
    return EXIT_OK


def cmd_rasterize(args):
    ann = read_annotation_file(args.annotations, _categories(args))
    os.makedirs(args.out_dir, exist_ok=True)
    written = 0
    for image_id, records in sorted(ann.by_image().items()):
        if args.image_id is not None and image_id != args.image_id:
            continue
        meta = ann.images.get(image_id, {})
        height = args.height or meta.get("height")
        width = args.width or meta.get("width")
        if not height or not width:
            _err(f"image {image_id}: size unknown; pass --height and --width")
            return EXIT_DOMAIN
        for rec in records:
            mask = rasterize(rec.segmentation, int(height), int(width))
            write_mask_png(os.path.join(args.out_dir, f"mask_{image_id}_{rec.annotation_id}.png"), mask)
            written += 1
    print(f"{written} masks written to {args.out_dir}")
    return EXIT_OK


def cmd_eval_map(args):
    ann = read_annotation_file(args.ground_truth, _categories(args))
    dets = load_detections(args.predictions, with_masks=args.mask_iou)
    sizes = {k: (v["height"], v["width"]) for k, v in ann.images.items() if "height" in v and "width" in v}
    report = evaluate_map(ann.records, dets, iou_thresh=args.iou, mask_iou=args.mask_iou, image_sizes=sizes)
    for cat in report.skipped_categories:
        _err(f"warning: category {cat} has predictions but no ground truth; skipped")
    if args.out_dir:
        report.write(args.out_dir)
    for cat in sorted(report.aps):
        print(f"category {cat}: AP {report.aps[cat]:.4f} ({report.n_gt[cat]} gt, {report.n_det[cat]} det)")
    print(f"mAP ({report.basis} IoU >= {args.iou:.2f}): {report.mean_ap:.2f}")
    return EXIT_OK


def cmd_eval_asdr(args):
    before = load_detections(args.before)
    after = load_detections(args.after)
    pairs = correspond_items(before, after, iou_thresh=args.iou)
    value = asdr(pairs)
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(
                {
                    "asdr": round(value, 10),
                    "items": [{"category_id": p.category_id, "s_before": p.s_before, "s_after": p.s_after} for p in pairs],
                },
                fh,
                indent=2,
            )
            fh.write("\n")
    print(f"ASDR: {value:.4f} over {len(pairs)} items")
    return EXIT_OK


def _nst_config(args):
    return NstConfig(
        content_weight=args.content_weight,
        style_weight=args.style_weight,
        tv_weight=args.tv_weight,
        iterations=args.iterations,
        step_size=args.step_size,
        optimizer=args.optimizer,
        snapshot_interval=args.snapshot_interval,
        init=args.init,
        seed=args.seed,
    )


def cmd_style_transfer(args):
    content = ImageTensor(read_png(args.content))
    style = ImageTensor(read_png(args.style))
    if args.size:
        content, _ = preprocess(content, args.size)
        style, _ = preprocess(style, args.size)
    extractor = load_extractor(args.weights or reference_weights_path())
    cfg = _nst_config(args)
    try:
        result = optimize(content, style, extractor, cfg)
    except NonFiniteLoss as exc:
        exc.result.write(args.out_dir)
        _err(str(exc))
        return EXIT_DOMAIN
    result.write(args.out_dir)
    first, last = result.history[0][1].total, result.history[-1][1].total
    print(f"loss {first:.6f} -> {last:.6f} after {cfg.iterations} iterations; {len(result.snapshots)} snapshots in {args.out_dir}")
    return EXIT_OK


def cmd_composite(args):
    original = ImageTensor(read_png(args.original))
    other = ImageTensor(read_png(args.stylized))
    mask = read_mask_png(args.mask)
    if args.copy_paste:
        out = copy_paste(original, other, mask)
    else:
        out = composite(CompositeJob(original, other, mask, args.feather))
    write_png(args.out, out.values)
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_run(args):
    manifest = RunManifest.load(args.manifest)
    if args.masks_dir:
        manifest.masks_dir = os.path.abspath(args.masks_dir)
    if args.output_dir:
        manifest.output_dir = os.path.abspath(args.output_dir)
    result = run_manifest(manifest)
    intact = outside_masks_identical(result)
    print(f"composited {len(result.masks)} categories into {manifest.path(manifest.output_dir)}; outside-mask pixels intact: {intact}")
    return EXIT_OK


def _add_nst_flags(p):
    d = NstConfig()
    p.add_argument("--iterations", type=int, default=d.iterations)
    p.add_argument("--step-size", type=float, default=d.step_size)
    p.add_argument("--optimizer", choices=("adam", "gd"), default=d.optimizer)
    p.add_argument("--snapshot-interval", type=int, default=d.snapshot_interval)
    p.add_argument("--content-weight", type=float, default=d.content_weight)
    p.add_argument("--style-weight", type=float, default=d.style_weight)
    p.add_argument("--tv-weight", type=float, default=d.tv_weight)
    p.add_argument("--init", choices=("content", "noise"), default=d.init)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--weights", help="NSTW weight file (default: bundled reference extractor)")


def build_parser():
    parser = argparse.ArgumentParser(prog="fitroom", description="Restyle fashion items in portraits and score detections.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and validate an annotation file")
    p.add_argument("annotations")
    p.add_argument("--categories", help="category table, one 'id<TAB>name' per line")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("rasterize", help="write one 1-bit mask PNG per annotation")
    p.add_argument("annotations")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--image-id", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--categories")
    p.set_defaults(func=cmd_rasterize)

    p = sub.add_parser("eval-map", help="per-category AP and mAP of predictions")
    p.add_argument("ground_truth")
    p.add_argument("predictions")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--mask-iou", action="store_true", help="match on mask IoU instead of box IoU")
    p.add_argument("--out-dir", help="write report.json and pr_<category>.csv here")
    p.add_argument("--categories")
    p.set_defaults(func=cmd_eval_map)

    p = sub.add_parser("eval-asdr", help="average score decay rate between two detection dumps")
    p.add_argument("before")
    p.add_argument("after")
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval_asdr)

    p = sub.add_parser("style-transfer", help="stylize a content image with a style image")
    p.add_argument("content")
    p.add_argument("style")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, help="pad and resize both images to SIZE x SIZE first")
    _add_nst_flags(p)
    p.set_defaults(func=cmd_style_transfer)

    p = sub.add_parser("composite", help="merge a stylized image into the original under a mask")
    p.add_argument("original")
    p.add_argument("stylized", help="stylized image, or texture with --copy-paste")
    p.add_argument("mask")
    p.add_argument("--out", required=True)
    p.add_argument("--feather", type=int, default=0)
    p.add_argument("--copy-paste", action="store_true", help="tile STYLIZED as a raw texture into the mask")
    p.set_defaults(func=cmd_composite)

    p = sub.add_parser("run", help="restyle the categories selected in a manifest")
    p.add_argument("manifest")
    p.add_argument("--masks-dir", help="directory of mask_<category_id>.png files overriding annotations")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", invalid="ignore")
    try:
        return args.func(args)
    except OSError as exc:
        _err(f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc))
        return EXIT_IO
    except (AnnotationError, ManifestError, ExtractorError, ValueError) as exc:
        _err(str(exc))
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
