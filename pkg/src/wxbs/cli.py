"""Command-line front end.

    wxbs match img1 img2 --out DIR [--model F|H|auto] [--config cfg.json]
    wxbs eval-matcher --manifest pairs.json --out-dir DIR
    wxbs eval-desc --manifest pairs.json --desc RootSift HalfRootSift --out-dir DIR
    wxbs synth-demo --image img --iter 2 --out-dir DIR
    wxbs detect-demo --image img --detector DoG --out kps.csv

Exit codes: 0 success, 1 matching failed, 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .descr import DescKind
from .detect import DetectorConfig, detect_keypoints, keypoints_to_lafs, orient_keypoints, write_keypoints_csv
from .evaluation import (EvalError, category_recall, complementarity_pairs, default_thresholds, desc_eval_prepare,
                         desc_precision_recall, homography_grid, load_manifest, pair_recall, svg_plot,
                         write_curves_csv)
from .geometry import ModelKind
from .imgproc import read_image
from .match import write_matches_csv
from .pipeline import MatcherConfig, default_threads, match_pair
from .viewsynth import synthesize_views

log = logging.getLogger("wxbs")


class UsageError(Exception):
    pass


def _out_path(path, force: bool) -> str:
    if os.path.exists(path) and not force:
        raise UsageError(f"{path} exists (use --force to overwrite)")
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return path


def _write_text(path, text: str, force: bool) -> None:
    with open(_out_path(path, force), "w", newline="") as f:
        f.write(text)


def _load_config(args) -> MatcherConfig:
    cfg = MatcherConfig.load(args.config) if args.config else MatcherConfig()
    threads = args.threads if args.threads else default_threads()
    cfg = replace(cfg, ransac=replace(cfg.ransac, seed=args.seed), threads=threads)
    model = getattr(args, "model", None)
    if model:
        cfg = replace(cfg, want_model={"F": "Fund", "H": "Hom", "auto": "Auto"}[model])
    return cfg


def _draw_matches(path, img1, img2, m, force: bool) -> None:
    from PIL import Image, ImageDraw

    h = max(img1.shape[0], img2.shape[0])
    canvas = np.zeros((h, img1.shape[1] + img2.shape[1]))
    canvas[: img1.shape[0], : img1.shape[1]] = img1
    canvas[: img2.shape[0], img1.shape[1] :] = img2
    im = Image.fromarray(np.round(np.clip(canvas, 0, 1) * 255).astype(np.uint8)).convert("RGB")
    dr = ImageDraw.Draw(im)
    off = img1.shape[1]
    for (a, b), (c, d) in zip(m.xy1, m.xy2):
        dr.line([(float(a), float(b)), (float(c) + off, float(d))], fill=(40, 220, 60), width=1)
    im.save(_out_path(path, force), format="PNG")


# --- commands -----------------------------------------------------------------------

def cmd_match(args) -> int:
    cfg = _load_config(args)
    img1, img2 = read_image(args.img1), read_image(args.img2)
    out = args.out
    paths = [os.path.join(out, "report.json"), os.path.join(out, "correspondences.csv")]
    if args.viz:
        paths.append(os.path.join(out, "matches.png"))
    for p in paths:
        _out_path(p, args.force)  # fail before the expensive part
    rep = match_pair(img1, img2, cfg)
    _write_text(paths[0], rep.to_json(args.timings), args.force)
    write_matches_csv(paths[1], rep.correspondences)
    if args.viz:
        _draw_matches(paths[2], img1, img2, rep.correspondences, args.force)
    print(f"{'succeeded' if rep.succeeded else 'failed'}: {rep.inlier_count} verified correspondences")
    return 0 if rep.succeeded else 1


def cmd_eval_matcher(args) -> int:
    cfg = _load_config(args)
    pairs = load_manifest(args.manifest)
    th = default_thresholds()
    curves, cats = {}, {}
    rows = []
    for gt in pairs:
        img1, img2 = read_image(gt.image1), read_image(gt.image2)
        c = replace(cfg, want_model=gt.model_kind.value)
        rep = match_pair(img1, img2, c)
        model = rep.model if rep.succeeded else None
        if model is not None and model.kind is not gt.model_kind:
            model = None
        if gt.model_kind is ModelKind.HOM:
            x1, x2 = homography_grid(gt.homography, img1.shape, shape2=img2.shape)
        else:
            x1, x2 = gt.x1, gt.x2
        rc = pair_recall(x1, x2, model, th, gt.model_kind)
        curves[gt.id] = rc
        cats.setdefault(gt.category, []).append(rc)
        rows.append((gt.id, gt.category, rep.succeeded, rep.inlier_count))
        log.info("pair %s: succeeded=%s inliers=%d", gt.id, rep.succeeded, rep.inlier_count)
    od = args.out_dir
    write_curves_csv(_out_path(os.path.join(od, "pair_recall.csv"), args.force), th,
                     {k: v.recall for k, v in curves.items()})
    cat_curves = {k: category_recall(v) for k, v in sorted(cats.items())}
    write_curves_csv(_out_path(os.path.join(od, "category_recall.csv"), args.force), th,
                     {k: v.recall for k, v in cat_curves.items()})
    with open(_out_path(os.path.join(od, "pairs.csv"), args.force), "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["id", "category", "succeeded", "inliers"])
        wr.writerows(rows)
    for k, v in cat_curves.items():
        svg = svg_plot({k: (v.thresholds, v.recall)}, "threshold [px]", "recall", f"category {k}", xmax=float(th[-1]))
        _write_text(os.path.join(od, f"recall_{_safe(k)}.svg"), svg, args.force)
    return 0


def cmd_eval_desc(args) -> int:
    pairs = [p for p in load_manifest(args.manifest) if p.model_kind is ModelKind.HOM]
    if not pairs:
        raise UsageError("manifest has no homography pairs for descriptor evaluation")
    kinds = [DescKind(k).value for k in args.desc]
    od = args.out_dir
    table = []
    for gt in pairs:
        img1, img2 = read_image(gt.image1), read_image(gt.image2)
        ks, pyr = detect_keypoints(img1, DetectorConfig.default(args.detector), args.detector)
        idx, ori = orient_keypoints(ks, pyr)
        l1, l2 = desc_eval_prepare(gt.homography, keypoints_to_lafs(ks, idx, ori), img2.shape)
        if len(l1) < 2:
            raise EvalError(f"pair {gt.id}: fewer than 2 visible features")
        res = {k: desc_precision_recall(l1, l2, img1, img2, k) for k in kinds}
        with open(_out_path(os.path.join(od, f"pr_{_safe(gt.id)}.csv"), args.force), "w", newline="") as f:
            wr = csv.writer(f, lineterminator="\n")
            wr.writerow(["descriptor", "ratio", "precision", "recall"])
            for k in kinds:
                for r, p, q in zip(res[k].ratio, res[k].precision, res[k].recall):
                    wr.writerow([k, f"{r:.4f}", f"{p:.6f}", f"{q:.6f}"])
        svg = svg_plot({f"{k} {res[k].mAP:.3f}": (res[k].recall, res[k].precision) for k in kinds},
                       "recall", "precision", f"pair {gt.id}", xmax=1.0)
        _write_text(os.path.join(od, f"pr_{_safe(gt.id)}.svg"), svg, args.force)
        for k in kinds:
            table.append((gt.id, k, res[k].mAP, len(l1)))
        if len(kinds) >= 2:
            comp = complementarity_pairs({k: res[k].correct for k in kinds})
            with open(_out_path(os.path.join(od, f"complementarity_{_safe(gt.id)}.csv"), args.force), "w",
                      newline="") as f:
                wr = csv.writer(f, lineterminator="\n")
                wr.writerow(["descriptor_a", "descriptor_b", "union"])
                wr.writerows(comp)
    with open(_out_path(os.path.join(od, "map.csv"), args.force), "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["pair", "descriptor", "mAP", "gt_pairs"])
        for pid, k, m, n in table:
            wr.writerow([pid, k, f"{m:.6f}", n])
    return 0


def cmd_synth_demo(args) -> int:
    from .imgproc import write_image

    img = read_image(args.image)
    sched = (MatcherConfig.load(args.config) if args.config else MatcherConfig()).schedule
    if not 1 <= args.iter <= len(sched.iterations):
        raise UsageError(f"--iter must lie in 1..{len(sched.iterations)}")
    views = synthesize_views(img, sched.iterations[args.iter - 1])
    rows = []
    for i, v in enumerate(views):
        name = f"view_{i:03d}.png"
        write_image(_out_path(os.path.join(args.out_dir, name), args.force), v.image)
        rows.append([name, f"{v.scale:.6f}", f"{v.tilt:.6f}", f"{np.degrees(v.rotation):.4f}",
                     v.image.shape[1], v.image.shape[0]] + [f"{a:.9g}" for a in v.A[:2].ravel()])
    with open(_out_path(os.path.join(args.out_dir, "views.csv"), args.force), "w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(["file", "scale", "tilt", "rotation_deg", "width", "height", "a11", "a12", "tx", "a21", "a22", "ty"])
        wr.writerows(rows)
    print(f"{len(views)} views written to {args.out_dir}")
    return 0


def cmd_detect_demo(args) -> int:
    img = read_image(args.image)
    ks, pyr = detect_keypoints(img, DetectorConfig.default(args.detector), args.detector)
    idx, ori = orient_keypoints(ks, pyr)
    write_keypoints_csv(_out_path(args.out, args.force), ks, idx, ori)
    print(f"{len(idx)} oriented keypoints (threshold {ks.threshold:.3g})")
    return 0


def _safe(s) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in str(s))


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wxbs", description="Wide-baseline two-view matching with view synthesis.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="matcher config JSON (see docs/config.md)")
        sp.add_argument("--seed", type=int, default=42, help="RANSAC seed (default 42)")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $WXBS_THREADS or CPU count)")
        sp.add_argument("--force", action="store_true", help="overwrite existing outputs")

    sp = sub.add_parser("match", help="match two images")
    sp.add_argument("img1")
    sp.add_argument("img2")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--model", choices=("F", "H", "auto"), default=None, help="model to estimate (default: config)")
    sp.add_argument("--viz", action="store_true", help="also write matches.png")
    sp.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    common(sp)
    sp.set_defaults(func=cmd_match)

    sp = sub.add_parser("eval-matcher", help="recall of the matcher on a GT manifest")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out-dir", required=True)
    common(sp)
    sp.set_defaults(func=cmd_eval_matcher)

    sp = sub.add_parser("eval-desc", help="descriptor precision-recall on homography pairs")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--desc", nargs="+", default=["RootSift", "HalfRootSift"],
                    choices=[k.value for k in DescKind])
    sp.add_argument("--detector", choices=("DoG", "Hessian"), default="DoG")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--force", action="store_true", help="overwrite existing outputs")
    sp.set_defaults(func=cmd_eval_desc)

    sp = sub.add_parser("synth-demo", help="dump the synthesized views of one iteration")
    sp.add_argument("--image", required=True)
    sp.add_argument("--iter", type=int, default=1)
    sp.add_argument("--config")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_synth_demo)

    sp = sub.add_parser("detect-demo", help="dump oriented keypoints of one image")
    sp.add_argument("--image", required=True)
    sp.add_argument("--detector", choices=("DoG", "Hessian"), default="DoG")
    sp.add_argument("--out", required=True)
    sp.add_argument("--force", action="store_true")
    sp.set_defaults(func=cmd_detect_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, EvalError, OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"wxbs: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
