"""Pixel-level inference and Hungarian-matched evaluation.

Inference slides the trained classifier over the image (one convolutional
pass), takes the per-location argmax, and resamples the resulting label map
back to the original image size. Evaluation matches predicted and ground
truth segments one-to-one by maximizing total IoU over the rectangular
assignment, then scores mean IoU over ground-truth segments (unmatched ones
count zero) and pixel accuracy under the same matching.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import net
from .errors import InputError
from .imagegrid import Image, SegmentationMap, load_image, load_label_png, upsample_nearest
from .trainer import GraplConfig, run_grapl

log = logging.getLogger(__name__)


def segment(params: net.NetworkParams, image: Image,
            config: GraplConfig | None = None) -> SegmentationMap:
    """Full-image segmentation with the trained classifier."""
    logits = net.forward_full(params, image)
    labels = np.argmax(logits, axis=2).astype(np.int32) + 1
    return upsample_nearest(SegmentationMap(labels), image.width, image.height)


@dataclass(frozen=True)
class Matching:
    pairs: tuple[tuple[int, int], ...]      # (predicted label, gt label)
    unmatched_pred: tuple[int, ...]
    unmatched_gt: tuple[int, ...]


def iou_matrix(pred: SegmentationMap, gt: SegmentationMap):
    """IoU between every (predicted, ground-truth) segment pair."""
    if pred.labels.shape != gt.labels.shape:
        raise ValueError("prediction and ground truth differ in size")
    pred_labels, pred_idx = np.unique(pred.labels, return_inverse=True)
    gt_labels, gt_idx = np.unique(gt.labels, return_inverse=True)
    pred_idx, gt_idx = pred_idx.ravel(), gt_idx.ravel()
    np_, ng = len(pred_labels), len(gt_labels)
    joint = np.bincount(pred_idx * ng + gt_idx, minlength=np_ * ng).reshape(np_, ng)
    pred_sizes = joint.sum(axis=1, keepdims=True)
    gt_sizes = joint.sum(axis=0, keepdims=True)
    union = pred_sizes + gt_sizes - joint
    return pred_labels, gt_labels, joint / union


def match_from_iou(pred_labels, gt_labels, iou) -> Matching:
    rows, cols = linear_sum_assignment(iou, maximize=True)
    pairs = tuple((int(pred_labels[r]), int(gt_labels[c]))
                  for r, c in zip(rows, cols))
    matched_pred = {p for p, _ in pairs}
    matched_gt = {g for _, g in pairs}
    return Matching(
        pairs=pairs,
        unmatched_pred=tuple(int(p) for p in pred_labels if p not in matched_pred),
        unmatched_gt=tuple(int(g) for g in gt_labels if g not in matched_gt),
    )


def hungarian_match(pred: SegmentationMap, gt: SegmentationMap) -> Matching:
    """One-to-one matching maximizing total IoU; handles unequal segment
    counts by leaving the surplus side unmatched."""
    pred_labels, gt_labels, iou = iou_matrix(pred, gt)
    return match_from_iou(pred_labels, gt_labels, iou)


def miou(pred: SegmentationMap, gt: SegmentationMap, matching: Matching) -> float:
    """Mean IoU over ground-truth segments; unmatched ones contribute zero."""
    pred_labels, gt_labels, iou = iou_matrix(pred, gt)
    pred_pos = {int(p): i for i, p in enumerate(pred_labels)}
    gt_pos = {int(g): j for j, g in enumerate(gt_labels)}
    total = 0.0
    for p, g in matching.pairs:
        total += iou[pred_pos[p], gt_pos[g]]
    return total / len(gt_labels)


def pixel_accuracy(pred: SegmentationMap, gt: SegmentationMap,
                   matching: Matching) -> float:
    """Fraction of pixels correct once predicted labels are renamed through
    the matching; pixels of unmatched predicted labels count as wrong."""
    relabel = {p: g for p, g in matching.pairs}
    mapped = np.zeros_like(pred.labels)
    for p, g in relabel.items():
        mapped[pred.labels == p] = g
    return float((mapped == gt.labels).mean())


def score_pair(pred: SegmentationMap, gt: SegmentationMap):
    matching = hungarian_match(pred, gt)
    return miou(pred, gt, matching), pixel_accuracy(pred, gt, matching), matching


# ---------------------------------------------------------------------------
# dataset harness

@dataclass
class ImageResult:
    image_id: str
    seed: int
    miou: float
    accuracy: float
    k_hat: int
    delta_k: int
    seconds: float
    annotations: list[dict] = field(default_factory=list)


@dataclass
class EvalReport:
    config: dict
    per_image: list[ImageResult]
    aggregate: dict
    skipped: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "config": self.config,
            "per_image": [
                {
                    "id": r.image_id, "seed": r.seed, "miou": r.miou,
                    "accuracy": r.accuracy, "k_hat": r.k_hat,
                    "delta_k": r.delta_k, "seconds": r.seconds,
                    "annotations": r.annotations,
                }
                for r in self.per_image
            ],
            "aggregate": self.aggregate,
            "skipped": self.skipped,
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2) + "\n")

    def to_csv(self, path) -> None:
        lines = ["id,seed,miou,accuracy,k_hat,delta_k,seconds"]
        for r in self.per_image:
            lines.append(f"{r.image_id},{r.seed},{r.miou:.6f},{r.accuracy:.6f},"
                         f"{r.k_hat},{r.delta_k},{r.seconds:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")


def aggregate_results(results: list[ImageResult], k0: int) -> dict:
    if not results:
        return {"miou_mean": 0.0, "miou_std": 0.0, "accuracy_mean": 0.0,
                "accuracy_std": 0.0, "delta_k_mean": 0.0, "n_results": 0}
    mious = np.array([r.miou for r in results])
    accs = np.array([r.accuracy for r in results])
    dks = np.array([r.delta_k for r in results], dtype=np.float64)
    return {
        "miou_mean": float(mious.mean()), "miou_std": float(mious.std()),
        "accuracy_mean": float(accs.mean()), "accuracy_std": float(accs.std()),
        "delta_k_mean": float(dks.mean()), "n_results": len(results),
    }


def find_ground_truths(gts_dir: Path, stem: str) -> list[Path]:
    """Ground-truth PNGs whose stem is the image stem, optionally followed
    by a separator and an annotation tag."""
    hits = []
    for path in sorted(gts_dir.glob("*.png")):
        s = path.stem
        if s == stem or (s.startswith(stem) and len(s) > len(stem)
                         and s[len(stem)] in "_-."):
            hits.append(path)
    return hits


def _run_one(job) -> ImageResult:
    image_path, gt_paths, seed, config = job
    config = dataclasses.replace(config, seed=seed)
    image = load_image(image_path)
    start = time.perf_counter()
    params, _, _ = run_grapl(image, config)
    pred = segment(params, image, config)
    seconds = time.perf_counter() - start
    k_hat = int(len(np.unique(pred.labels)))

    annotations = []
    best = None
    for gt_path in gt_paths:
        gt = load_label_png(gt_path)
        m, a, _ = score_pair(pred, gt)
        annotations.append({"gt": gt_path.name, "miou": m, "accuracy": a})
        if best is None or m > best[0]:
            best = (m, a)
    return ImageResult(
        image_id=Path(image_path).stem, seed=seed, miou=best[0],
        accuracy=best[1], k_hat=k_hat, delta_k=config.k0 - k_hat,
        seconds=seconds, annotations=annotations)


def evaluate_dataset(images_dir, gts_dir, config: GraplConfig,
                     seeds: list[int], jobs: int = 1) -> EvalReport:
    """Run the full pipeline for every (image, seed) pair and score each
    prediction against its best ground-truth annotation."""
    images_dir, gts_dir = Path(images_dir), Path(gts_dir)
    if not images_dir.is_dir():
        raise InputError(f"images directory not found: {images_dir}")
    if not gts_dir.is_dir():
        raise InputError(f"ground-truth directory not found: {gts_dir}")
    image_paths = sorted(p for p in images_dir.iterdir()
                         if p.suffix.lower() in (".png", ".ppm"))
    if not image_paths:
        raise InputError(f"no images in {images_dir}")

    skipped = []
    joblist = []
    for path in image_paths:
        from PIL import Image as PILImage

        with PILImage.open(path) as probe:
            image_size = (probe.height, probe.width)
        gt_paths = find_ground_truths(gts_dir, path.stem)
        ok = []
        for gp in gt_paths:
            try:
                gt = load_label_png(gp)
                if gt.labels.shape != image_size:
                    raise InputError(
                        f"size {gt.labels.shape} != image {image_size}")
                ok.append(gp)
            except InputError as exc:
                skipped.append(f"{gp.name}: {exc}")
                log.warning("skipping ground truth %s: %s", gp, exc)
        if not ok:
            skipped.append(f"{path.name}: no usable ground truth")
            log.warning("skipping %s: no usable ground truth", path.name)
            continue
        for seed in seeds:
            joblist.append((path, ok, seed, config))

    if jobs > 1 and len(joblist) > 1:
        import multiprocessing as mp

        with mp.get_context("spawn").Pool(jobs) as pool:
            results = pool.map(_run_one, joblist)
    else:
        results = [_run_one(job) for job in joblist]

    return EvalReport(config=config.as_dict(), per_image=results,
                      aggregate=aggregate_results(results, config.k0),
                      skipped=skipped)
