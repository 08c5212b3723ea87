"""Command-line entry points.

Verbs: segment (one image, writes label map, overlay, history, report),
eval (dataset harness, writes JSON + CSV), inspect (prints the resolved
configuration; optionally dumps loss/energy curves from a history file as
CSV), baseline (superpixel segmentation over RGB or embedding features).

Exit codes: 1 bad arguments, 2 bad input, 3 runtime failure.
Flag precedence: command line > config file > built-in defaults.
The GRAPL_LOG environment variable sets the log level.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import infer_eval, initializers, mrf, trainer
from .errors import InputError
from .imagegrid import (Image, SegmentationMap, label_palette, load_image,
                        save_label_png)

log = logging.getLogger(__name__)

EXIT_BAD_ARGS = 1
EXIT_BAD_INPUT = 2
EXIT_RUNTIME = 3


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def _parse_seeds(text: str) -> list[int]:
    """Seed lists: '0..9' ranges or comma-separated values."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--k0", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--steps", type=str, help="comma-separated step counts")
    p.add_argument("--lr", type=float)
    p.add_argument("--init", choices=initializers.INITIALIZERS)
    p.add_argument("--affinity", choices=mrf.AFFINITY_VARIANTS)
    p.add_argument("--embeddings", type=Path, help="embedding file (required "
                   "for --affinity embedding)")
    p.add_argument("--graph-topology", dest="graph_topology",
                   choices=("full", "lattice"))
    p.add_argument("--cold-start", dest="cold_start", action="store_true",
                   default=None)
    p.add_argument("--dropout", type=float)
    p.add_argument("--early-stop-ce", dest="early_stop_ce", type=float)


def resolve_config(args: argparse.Namespace, seed: int | None = None
                   ) -> trainer.GraplConfig:
    cfg = trainer.GraplConfig()
    if getattr(args, "config", None):
        cfg = trainer.load_config_file(args.config, cfg)
    overrides = {}
    for key in ("k0", "d", "lam", "mu", "lr", "init", "affinity",
                "graph_topology", "cold_start", "dropout", "early_stop_ce"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "steps", None) is not None:
        overrides["steps"] = tuple(int(t) for t in args.steps.split(","))
    if getattr(args, "embeddings", None) is not None:
        overrides["embeddings"] = str(args.embeddings)
    if seed is not None:
        overrides["seed"] = seed
    cfg = trainer.config_from_mapping(overrides, cfg)
    cfg.validate()
    return cfg


def save_overlay(image: Image, smap: SegmentationMap, path) -> None:
    """Label colors alpha-blended onto the input at 0.5."""
    from PIL import Image as PILImage

    rgb = image.data if image.channels == 3 else np.repeat(image.data, 3, axis=2)
    colors = label_palette()[np.minimum(smap.labels, 255)] / 255.0
    blend = np.clip(0.5 * rgb + 0.5 * colors, 0.0, 1.0)
    PILImage.fromarray((blend * 255).round().astype(np.uint8)).save(path)


def cmd_segment(args) -> int:
    config = resolve_config(args, seed=args.seed)
    image = load_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    params, history, labeling = trainer.run_grapl(image, config)
    pred = infer_eval.segment(params, image, config)
    k_hat = int(len(np.unique(pred.labels)))

    stem = Path(args.image).stem
    save_label_png(pred, out / f"{stem}_labels.png")
    save_overlay(image, pred, out / f"{stem}_overlay.png")
    (out / f"{stem}_history.json").write_text(
        json.dumps(history.as_dict(), indent=2) + "\n")
    report = {
        "image": str(args.image),
        "config": config.as_dict(),
        "seed": config.seed,
        "k_hat": k_hat,
        "delta_k": config.k0 - k_hat,
        "patch_k_hat": trainer.distinct_labels(labeling),
        "labels_present": sorted(int(v) for v in np.unique(pred.labels)),
    }
    (out / f"{stem}_report.json").write_text(json.dumps(report, indent=2) + "\n")
    if args.save_weights:
        from . import net

        net.save_params(params, out / f"{stem}_weights.gplw")
    log.info("wrote outputs for %s to %s (k_hat=%d)", stem, out, k_hat)
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    seeds = _parse_seeds(args.seeds)
    if not seeds:
        raise InputError("empty seed list")
    report = infer_eval.evaluate_dataset(args.images, args.gts, config, seeds,
                                         jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_json(out / "eval_report.json")
    report.to_csv(out / "eval_report.csv")
    agg = report.aggregate
    print(f"images x seeds: {agg['n_results']}  "
          f"miou {agg['miou_mean']:.4f} +- {agg['miou_std']:.4f}  "
          f"accuracy {agg['accuracy_mean']:.4f}  "
          f"delta_k {agg['delta_k_mean']:.2f}")
    return 0


def cmd_inspect(args) -> int:
    config = resolve_config(args, seed=args.seed)
    for key, value in config.as_dict().items():
        if key == "steps":
            value = ",".join(str(s) for s in value)
        print(f"{key} = {value}")
    if args.history:
        history = json.loads(Path(args.history).read_text())
        out = Path(args.out) if args.out else Path(args.history).parent
        out.mkdir(parents=True, exist_ok=True)
        loss_csv = ["global_step,iteration,step,cross_entropy,continuity,total,"
                    "mean_cross_entropy"]
        for i, s in enumerate(history.get("steps", [])):
            loss_csv.append(
                f"{i},{s['iteration']},{s['step']},{s['cross_entropy']:.6f},"
                f"{s['continuity']:.6f},{s['total']:.6f},"
                f"{s['mean_cross_entropy']:.6f}")
        (out / "loss_curve.csv").write_text("\n".join(loss_csv) + "\n")
        energy_csv = ["iteration,total_before,unary_before,pairwise_before,"
                      "total_after,unary_after,pairwise_after,k_hat"]
        for it in history.get("iterations", []):
            eb, ea = it["energy_before"], it["energy_after"]
            energy_csv.append(
                f"{it['iteration']},{eb['total']:.6f},{eb['unary']:.6f},"
                f"{eb['pairwise']:.6f},{ea['total']:.6f},{ea['unary']:.6f},"
                f"{ea['pairwise']:.6f},{it['k_hat']}")
        (out / "energies.csv").write_text("\n".join(energy_csv) + "\n")
        print(f"wrote {out / 'loss_curve.csv'} and {out / 'energies.csv'}")
    return 0


def _bilinear_grid_features(vectors: np.ndarray, d: int, height: int,
                            width: int) -> np.ndarray:
    """Resample per-cell vectors of a d x d grid to pixel resolution."""
    dim = vectors.shape[1]
    grid = vectors.reshape(d, d, dim)
    ys = np.clip((np.arange(height) + 0.5) * d / height - 0.5, 0, d - 1)
    xs = np.clip((np.arange(width) + 0.5) * d / width - 0.5, 0, d - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, d - 1)
    x1 = np.minimum(x0 + 1, d - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    return ((1 - wy) * (1 - wx) * grid[np.ix_(y0, x0)]
            + (1 - wy) * wx * grid[np.ix_(y0, x1)]
            + wy * (1 - wx) * grid[np.ix_(y1, x0)]
            + wy * wx * grid[np.ix_(y1, x1)])


def cmd_baseline(args) -> int:
    image = load_image(args.image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.features == "rgb":
        params = initializers.SlicParams(k=args.k)
        pred = initializers.slic_segment(image, params)
    else:
        if not args.embeddings:
            raise InputError("embedding baseline needs --embeddings")
        d, vectors = mrf.load_gple(args.embeddings)
        feats = _bilinear_grid_features(vectors, d, image.height, image.width)
        labels0 = initializers.slic_partition(feats, args.k, compactness=1.0,
                                              iterations=10)
        pred = SegmentationMap(initializers.enforce_connectivity(labels0))

    if pred.labels.max() > 255:
        raise RuntimeError("baseline produced more than 255 segments")
    stem = Path(args.image).stem
    save_label_png(pred, out / f"{stem}_{args.features}_baseline.png")

    report = {"image": str(args.image), "features": args.features, "k": args.k,
              "n_segments": int(len(np.unique(pred.labels)))}
    if args.gts:
        gt_paths = infer_eval.find_ground_truths(Path(args.gts), stem)
        scores = []
        for gp in gt_paths:
            from .imagegrid import load_label_png

            gt = load_label_png(gp)
            m, a, _ = infer_eval.score_pair(pred, gt)
            scores.append({"gt": gp.name, "miou": m, "accuracy": a})
        if scores:
            report["annotations"] = scores
            report["miou"] = max(s["miou"] for s in scores)
            report["accuracy"] = max(
                (s for s in scores), key=lambda s: s["miou"])["accuracy"]
    (out / f"{stem}_{args.features}_baseline.json").write_text(
        json.dumps(report, indent=2) + "\n")
    if "miou" in report:
        print(f"{stem}: {args.features} baseline miou {report['miou']:.4f}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="grapl", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_seg = sub.add_parser("segment", help="segment one image")
    p_seg.add_argument("image", type=Path)
    p_seg.add_argument("--out", type=Path, required=True)
    p_seg.add_argument("--seed", type=int, default=None)
    p_seg.add_argument("--save-weights", action="store_true")
    _add_config_flags(p_seg)
    p_seg.set_defaults(func=cmd_segment)

    p_eval = sub.add_parser("eval", help="score a dataset")
    p_eval.add_argument("--images", type=Path, required=True)
    p_eval.add_argument("--gts", type=Path, required=True)
    p_eval.add_argument("--out", type=Path, required=True)
    p_eval.add_argument("--seeds", type=str, default="0..9",
                        help="e.g. 0..9 or 0,3,7")
    p_eval.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_ins = sub.add_parser("inspect", help="print the resolved config; "
                           "optionally dump curves from a history file")
    p_ins.add_argument("--seed", type=int, default=None)
    p_ins.add_argument("--history", type=Path)
    p_ins.add_argument("--out", type=Path)
    _add_config_flags(p_ins)
    p_ins.set_defaults(func=cmd_inspect)

    p_base = sub.add_parser("baseline", help="superpixel baseline segmenter")
    p_base.add_argument("image", type=Path)
    p_base.add_argument("--k", type=int, default=14)
    p_base.add_argument("--features", choices=("rgb", "embedding"),
                        default="rgb")
    p_base.add_argument("--embeddings", type=Path)
    p_base.add_argument("--gts", type=Path, help="score against ground truths")
    p_base.add_argument("--out", type=Path, required=True)
    p_base.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GRAPL_LOG", "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        level = "WARNING"
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    try:
        return args.func(args)
    except (InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_ARGS
    except Exception as exc:  # noqa: BLE001 - boundary of the process
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
