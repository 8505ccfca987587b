"""Command-line entry point: ``signdet <command> ...``.

Exit status: 0 success, 1 validation failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import blocks as B
from .anchors import kmeans_anchors
from .augment import augment_sample
from .config import ConfigError, RunConfig, augment_dict, config_hash, load_config
from .evaluation import Detection, GroundTruth, evaluate, fps_bench
from .gradcheck import run_suite
from .io import (
    LabelError,
    box_shapes,
    dataset_stems,
    image_size,
    load_dataset,
    read_label_dir,
    save_labeled_image,
    sha256_file,
)

log = logging.getLogger("signdet")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2
BENCH_SIZES = (20, 40, 80, 160)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _json_dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- augment -----------------------------------------------------------------


def _input_digest(root: Path, stems: list[str]) -> list[dict]:
    return [{"stem": s,
             "image_sha256": sha256_file(root / "images" / f"{s}.png"),
             "label_sha256": sha256_file(root / "labels" / f"{s}.txt")} for s in stems]


def cmd_augment(args, cfg: RunConfig) -> int:
    manifest_in = None
    if args.manifest:
        manifest_in = json.loads(Path(args.manifest).read_text())
        cfg = cfg.with_overrides(**manifest_in["config"])
        in_dir = Path(args.in_dir or manifest_in["input_dir"])
        count = manifest_in["count"]
    else:
        if not (args.in_dir or cfg.in_dir):
            raise UsageError("augment: --in is required (or --manifest)")
        in_dir = Path(args.in_dir or cfg.in_dir)
        count = args.count
    out_dir = args.out_dir or cfg.out_dir
    if not out_dir:
        raise UsageError("augment: --out is required")
    out_dir = Path(out_dir)

    aug = cfg.augment_config()
    stems, dataset = load_dataset(in_dir)
    inputs = _input_digest(in_dir, stems)
    if manifest_in is not None:
        if inputs != manifest_in["inputs"]:
            raise LabelError("input files differ from those recorded in the manifest")
        if config_hash(aug) != manifest_in["config_hash"]:
            raise ConfigError("config hash differs from the manifest")
    count = len(dataset) if count is None else count
    if count < 1:
        raise UsageError("augment: --count must be >= 1")

    outputs = []
    for i in range(count):
        sample = augment_sample(dataset, i % len(dataset), aug, stream=i)
        name = f"{i:05d}"
        save_labeled_image(out_dir, name, sample)
        outputs.append({
            "name": name,
            "source": stems[i % len(dataset)],
            "image_sha256": sha256_file(out_dir / "images" / f"{name}.png"),
            "label_sha256": sha256_file(out_dir / "labels" / f"{name}.txt"),
            "box_weights": [round(float(w), 6) for w in sample.weights],
        })
    manifest = {
        "command": "augment",
        "version": __version__,
        "seed": aug.seed,
        "config": augment_dict(aug),
        "config_hash": config_hash(aug),
        "input_dir": str(in_dir),
        "inputs": inputs,
        "count": count,
        "outputs": outputs,
    }
    _json_dump(manifest, out_dir / "manifest.json")
    print(f"augment\t{count} images\t{out_dir}\tconfig_hash={manifest['config_hash'][:12]}")
    return EXIT_OK


# --- anchors -----------------------------------------------------------------


def cmd_anchors(args, cfg: RunConfig) -> int:
    labels = args.labels or cfg.labels_dir
    out = args.out or cfg.out_file
    if not labels or not out:
        raise UsageError("anchors: --labels and --out are required")
    sizes = None
    if args.images:
        img_dir = Path(args.images)
        if not img_dir.is_dir():
            raise FileNotFoundError(f"image directory {img_dir} does not exist")
        sizes = {p.stem: image_size(p) for p in sorted(img_dir.glob("*.png"))}
    else:
        side = cfg.anchor_img_size if args.img_size is None else args.img_size
        if side < 1:
            raise UsageError("anchors: --img-size must be >= 1")
        sizes = {p.stem: (side, side) for p in Path(labels).glob("*.txt")}
    records = [r for recs in read_label_dir(Path(labels), sizes=sizes).values() for r in recs]
    shapes = box_shapes(records)
    degenerate = ~np.all(shapes > 0, axis=1)
    if degenerate.any():
        log.warning("skipping %d zero-size boxes", int(degenerate.sum()))
        shapes = shapes[~degenerate]
    k = cfg.anchor_k if args.k is None else args.k
    result = kmeans_anchors(shapes, k, cfg.seed, cfg.anchor_max_iter)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(result.to_text(k, cfg.seed))
    if not args.no_plots:
        from .plots import plot_anchors
        plot_anchors(shapes, result.anchors, out.with_suffix(".png"))
    print(f"anchors\tk={k}\tboxes={len(shapes)}\tmean_best_iou={result.mean_best_iou:.6f}\t{out}")
    return EXIT_OK


# --- eval --------------------------------------------------------------------


def cmd_eval(args, cfg: RunConfig) -> int:
    gt_dir = args.gt or cfg.gt_dir
    pred_dir = args.pred or cfg.pred_dir
    if not gt_dir or not pred_dir:
        raise UsageError("eval: --gt and --pred are required")
    iou_t = cfg.iou_thresh if args.iou is None else args.iou
    conf_t = cfg.conf_thresh if args.conf is None else args.conf
    # IoU is invariant to per-axis scaling, so normalised coordinates suffice
    gts = [GroundTruth(b, c, stem) for stem, recs in read_label_dir(Path(gt_dir)).items() for c, b in recs]
    dets = [Detection(b, c, s, stem)
            for stem, recs in read_label_dir(Path(pred_dir), expect_scores=True).items() for c, b, s in recs]
    report = evaluate(dets, gts, iou_t, conf_t)
    out = args.out or cfg.out_file
    if out:
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _json_dump(report.to_dict(), out)
        if not args.no_plots:
            from .plots import plot_pr_curves
            plot_pr_curves(report, out.with_name(out.stem + "_pr.png"))
    print("metric\tvalue")
    for key in ("map50", "precision", "recall"):
        print(f"{key}\t{getattr(report, key):.6f}")
    for key in ("tp", "fp", "fn"):
        print(f"{key}\t{getattr(report, key)}")
    for cls, ap in sorted(report.per_class_ap.items()):
        print(f"ap_class_{cls}\t{ap:.6f}")
    return EXIT_OK


# --- gradcheck / bench -------------------------------------------------------


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    trials = cfg.gradcheck_trials if args.trials is None else args.trials
    if trials < 1:
        raise UsageError("gradcheck: --trials must be >= 1")
    results = run_suite(trials, cfg.seed)
    print("target\ttrials\tmax_rel_error\ttolerance\tseconds\tstatus")
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name}\t{r.trials}\t{r.max_rel_error:.3e}\t{r.tolerance:.0e}\t{r.seconds:.2f}\t{status}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def bench_workloads(size: int, channels: int, seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, channels, size, size)).astype(np.float32)
    half = rng.standard_normal((1, channels, size // 2, size // 2)).astype(np.float32)
    double = rng.standard_normal((1, channels, 2 * size, 2 * size)).astype(np.float32)
    ca = B.CaParams.build(channels, ratio=max(channels // 8, 1), rng=rng)
    td = B.BifpnNodeParams.uniform(2, channels)
    bu = B.BifpnNodeParams.uniform(3, channels)
    od = B.OdconvParams.build(channels, channels, 4, rng=rng)
    ls = B.LskaParams.build(channels, rng=rng)
    return {
        "coordinate_attention": lambda: B.coordinate_attention(x, ca),
        "bifpn_layer4": lambda: B.bifpn_layer4(x, half, double, td, bu),
        "odconv": lambda: B.odconv(x, od),
        "lska": lambda: B.lska(x, ls),
    }


def cmd_bench(args, cfg: RunConfig) -> int:
    iters = cfg.bench_iters if args.iters is None else args.iters
    warmup = cfg.bench_warmup if args.warmup is None else args.warmup
    channels = cfg.bench_channels if args.channels is None else args.channels
    if iters < 1 or warmup < 0 or channels < 1:
        raise UsageError("bench: need --iters >= 1, --warmup >= 0 and --channels >= 1")
    rows = []
    print("block\tsize\tfps\tmean_ms\tmin_ms\tmax_ms")
    for size in BENCH_SIZES:
        for name, work in bench_workloads(size, channels, cfg.seed).items():
            r = fps_bench(work, warmup, iters)
            rows.append({"block": name, "size": size, "channels": channels, "fps": r.fps,
                         "mean_ms": r.mean_ms, "min_ms": r.min_ms, "max_ms": r.max_ms})
            print(f"{name}\t{size}\t{r.fps:.2f}\t{r.mean_ms:.3f}\t{r.min_ms:.3f}\t{r.max_ms:.3f}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
        if not args.no_plots:
            from .plots import plot_bench
            plot_bench(rows, out.with_suffix(".png"))
    return EXIT_OK


def cmd_make_demo(args, cfg: RunConfig) -> int:
    from .synth import make_demo_dataset
    names = make_demo_dataset(Path(args.out_dir), args.n, cfg.seed)
    dataset_stems(Path(args.out_dir))
    print(f"make-demo\t{len(names)} images\t{args.out_dir}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat JSON run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = _Parser(prog="signdet", parents=[common],
                description="Detection building blocks: augmentation, anchors, evaluation, gradient checks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    a = sub.add_parser("augment", parents=[common], help="Mosaic/MixUp/photometric/noise pipeline")
    a.add_argument("--in", dest="in_dir")
    a.add_argument("--out", dest="out_dir")
    a.add_argument("--count", type=int)
    a.add_argument("--manifest", help="replay a previous run from its manifest.json")
    a.set_defaults(func=cmd_augment)

    k = sub.add_parser("anchors", parents=[common], help="k-means anchors from a label directory")
    k.add_argument("--labels")
    k.add_argument("--k", type=int)
    k.add_argument("--out")
    k.add_argument("--images", help="directory of PNGs giving per-image sizes")
    k.add_argument("--img-size", type=int, help="square image side when --images is absent")
    k.add_argument("--no-plots", action="store_true")
    k.set_defaults(func=cmd_anchors)

    e = sub.add_parser("eval", parents=[common], help="mAP@0.5, precision and recall")
    e.add_argument("--gt")
    e.add_argument("--pred")
    e.add_argument("--iou", type=float)
    e.add_argument("--conf", type=float)
    e.add_argument("--out")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    g.add_argument("--trials", type=int)
    g.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("bench", parents=[common], help="FPS of each block at P2..P5 extents")
    b.add_argument("--iters", type=int)
    b.add_argument("--warmup", type=int)
    b.add_argument("--channels", type=int)
    b.add_argument("--out", help="CSV path; a bar chart is written alongside")
    b.add_argument("--no-plots", action="store_true")
    b.set_defaults(func=cmd_bench)

    d = sub.add_parser("make-demo", parents=[common], help="write a small synthetic dataset")
    d.add_argument("--out", dest="out_dir", required=True)
    d.add_argument("--n", type=int, default=20)
    d.set_defaults(func=cmd_make_demo)
    return p


def run_command(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(message)s")
        if not getattr(args, "command", None):
            raise UsageError("signdet: a command is required (augment, anchors, eval, gradcheck, bench, make-demo)")
        cfg = load_config(getattr(args, "config", None))
        if hasattr(args, "seed"):
            cfg = cfg.with_overrides(seed=args.seed)
        return args.func(args, cfg)
    except (UsageError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
