"""Semantic and instance evaluation metrics.

Semantic: per-image mean IoU (gIoU), dataset-aggregated IoU (cIoU), and the
boundary-band variants Boundary-IoU and Boundary-F1 at a configurable pixel
tolerance (3 by default). Instance: the AP family (AP50, AP75, mAP over
0.50:0.05:0.95, and size-bucketed AP) with greedy confidence-ordered matching.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .arrays import BinaryMask
from .errors import ShapeMismatchError
from .refine import InstanceSet

__all__ = [
    "IOU_THRESHOLDS",
    "SMALL_AREA",
    "LARGE_AREA",
    "SampleScore",
    "SemanticEvalReport",
    "InstanceEvalReport",
    "g_iou",
    "c_iou",
    "boundary_band",
    "mask_boundary",
    "boundary_iou",
    "boundary_f1",
    "evaluate_semantic",
    "instance_ap",
]

IOU_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
SMALL_AREA = 32 * 32
LARGE_AREA = 96 * 96


def _check_pair(pred: BinaryMask, gt: BinaryMask) -> None:
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"pred is {pred.shape}, gt is {gt.shape}")


def _pair_counts(pred: BinaryMask, gt: BinaryMask) -> tuple[int, int]:
    inter = int(np.logical_and(pred.bits, gt.bits).sum())
    uni = int(np.logical_or(pred.bits, gt.bits).sum())
    return inter, uni


def _pair_iou(pred: BinaryMask, gt: BinaryMask) -> float:
    inter, uni = _pair_counts(pred, gt)
    return 1.0 if uni == 0 else inter / uni


def g_iou(pairs: list[tuple[BinaryMask, BinaryMask]]) -> float:
    """Mean of per-image IoU."""
    if not pairs:
        raise ValueError("g_iou needs at least one (pred, gt) pair")
    total = 0.0
    for pred, gt in pairs:
        _check_pair(pred, gt)
        total += _pair_iou(pred, gt)
    return total / len(pairs)


def c_iou(pairs: list[tuple[BinaryMask, BinaryMask]]) -> float:
    """Dataset-aggregated IoU: sum of intersections over sum of unions."""
    if not pairs:
        raise ValueError("c_iou needs at least one (pred, gt) pair")
    inter_sum = 0
    union_sum = 0
    for pred, gt in pairs:
        _check_pair(pred, gt)
        inter, uni = _pair_counts(pred, gt)
        inter_sum += inter
        union_sum += uni
    if union_sum == 0:
        warnings.warn("c_iou over an all-empty dataset is defined as 1.0", stacklevel=2)
        return 1.0
    return inter_sum / union_sum


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return yy * yy + xx * xx <= radius * radius


def boundary_band(mask: BinaryMask, d: int) -> BinaryMask:
    """Pixels of the mask within Euclidean distance d of its complement.

    band(m) = m minus the erosion of m by a disk of radius d; pixels outside
    the image count as background, so masks touching the border have a band
    there too.
    """
    if d < 1:
        raise ValueError("tolerance d must be >= 1")
    eroded = ndimage.binary_erosion(mask.bits, structure=_disk(d), border_value=0)
    return BinaryMask(mask.bits & ~eroded)


def mask_boundary(mask: BinaryMask) -> BinaryMask:
    """Inner 1-pixel contour: mask pixels with a 4-neighbor (or border) background."""
    return boundary_band(mask, 1)


def boundary_iou(pred: BinaryMask, gt: BinaryMask, d: int = 3) -> float:
    """IoU restricted to the d-pixel boundary bands of the two masks."""
    _check_pair(pred, gt)
    band_p = boundary_band(pred, d).bits
    band_g = boundary_band(gt, d).bits
    inter = int(np.logical_and(band_p, band_g).sum())
    uni = int(np.logical_or(band_p, band_g).sum())
    if uni == 0:
        warnings.warn("both boundary bands empty; boundary_iou defined as 1.0", stacklevel=2)
        return 1.0
    return inter / uni


def boundary_f1(pred: BinaryMask, gt: BinaryMask, d: int = 3) -> float:
    """F-score on boundary contours with a d-pixel Euclidean match tolerance."""
    _check_pair(pred, gt)
    bp = mask_boundary(pred).bits
    bg = mask_boundary(gt).bits
    np_, ng = int(bp.sum()), int(bg.sum())
    if np_ == 0 and ng == 0:
        warnings.warn("both boundaries empty; boundary_f1 defined as 1.0", stacklevel=2)
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    dist_to_gt = ndimage.distance_transform_edt(~bg)
    dist_to_pred = ndimage.distance_transform_edt(~bp)
    precision = float((dist_to_gt[bp] <= d).sum()) / np_
    recall = float((dist_to_pred[bg] <= d).sum()) / ng
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class SampleScore:
    sample_id: str
    iou: float
    b_iou: float
    b_f1: float
    intersection: int
    union: int


@dataclass(frozen=True)
class SemanticEvalReport:
    g_iou: float
    c_iou: float
    boundary_iou: float
    boundary_f1: float
    n_samples: int
    intersection_sum: int
    union_sum: int
    per_sample: tuple[SampleScore, ...] = field(default=(), repr=False)


def evaluate_semantic(
    samples: list[tuple[str, BinaryMask, BinaryMask]],
    d: int = 3,
    jobs: int = 1,
) -> SemanticEvalReport:
    """Score (id, pred, gt) samples and aggregate.

    `jobs` controls sample-level parallelism; results are reduced in input
    order so the report is independent of the worker count.
    """
    if not samples:
        raise ValueError("no samples to evaluate")

    def score(item: tuple[str, BinaryMask, BinaryMask]) -> SampleScore:
        sample_id, pred, gt = item
        _check_pair(pred, gt)
        inter, uni = _pair_counts(pred, gt)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            b_i = boundary_iou(pred, gt, d)
            b_f = boundary_f1(pred, gt, d)
        return SampleScore(
            sample_id=sample_id,
            iou=1.0 if uni == 0 else inter / uni,
            b_iou=b_i,
            b_f1=b_f,
            intersection=inter,
            union=uni,
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(score, samples))
    else:
        scores = [score(item) for item in samples]

    inter_sum = sum(s.intersection for s in scores)
    union_sum = sum(s.union for s in scores)
    if union_sum == 0:
        warnings.warn("all-empty dataset; c_iou defined as 1.0", stacklevel=2)
    return SemanticEvalReport(
        g_iou=sum(s.iou for s in scores) / len(scores),
        c_iou=1.0 if union_sum == 0 else inter_sum / union_sum,
        boundary_iou=sum(s.b_iou for s in scores) / len(scores),
        boundary_f1=sum(s.b_f1 for s in scores) / len(scores),
        n_samples=len(scores),
        intersection_sum=inter_sum,
        union_sum=union_sum,
        per_sample=tuple(scores),
    )


@dataclass(frozen=True)
class ThresholdCurve:
    threshold: float
    ap: float
    n_gt: int
    tp: int
    fp: int
    precisions: tuple[float, ...] = field(default=(), repr=False)
    recalls: tuple[float, ...] = field(default=(), repr=False)


@dataclass(frozen=True)
class InstanceEvalReport:
    ap50: float
    ap75: float
    map: float
    ap_s: float
    ap_m: float
    ap_l: float
    per_threshold: tuple[ThresholdCurve, ...] = field(default=(), repr=False)


def _bucket_keep(area: float, bucket: str) -> bool:
    if bucket == "all":
        return True
    if bucket == "small":
        return area < SMALL_AREA
    if bucket == "medium":
        return SMALL_AREA <= area <= LARGE_AREA
    return area > LARGE_AREA


def _ap_from_records(
    records: list[tuple[float, int, int, bool]], n_gt: int, interpolation: str
) -> tuple[float, list[float], list[float], int, int]:
    """records: (confidence, sample_idx, pred_idx, is_tp) for non-ignored preds."""
    if n_gt == 0:
        return (1.0 if not records else 0.0), [], [], 0, 0
    if not records:
        return 0.0, [], [], 0, 0
    records = sorted(records, key=lambda r: (-r[0], r[1], r[2]))
    tp_cum = 0
    fp_cum = 0
    precisions: list[float] = []
    recalls: list[float] = []
    for _, _, _, is_tp in records:
        if is_tp:
            tp_cum += 1
        else:
            fp_cum += 1
        precisions.append(tp_cum / (tp_cum + fp_cum))
        recalls.append(tp_cum / n_gt)
    # precision envelope: best precision achievable at recall >= r
    envelope = precisions.copy()
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    if interpolation == "101":
        ap = 0.0
        for r in np.linspace(0.0, 1.0, 101):
            idx = np.searchsorted(recalls, r, side="left")
            ap += envelope[idx] if idx < len(envelope) else 0.0
        ap /= 101.0
    elif interpolation == "all-points":
        ap = 0.0
        prev_r = 0.0
        for i, r in enumerate(recalls):
            if r > prev_r:
                ap += (r - prev_r) * envelope[i]
                prev_r = r
    else:
        raise ValueError(f"unknown interpolation {interpolation!r}")
    return ap, precisions, recalls, tp_cum, fp_cum


def _match_sample(
    pred_masks: list[BinaryMask],
    confidences: list[float],
    gt_masks: list[BinaryMask],
    keep_gt: list[bool],
    threshold: float,
    iou_matrix: np.ndarray,
) -> list[tuple[int, str]]:
    """Greedy matching in confidence order. Returns (pred_idx, kind) where kind
    is 'tp', 'fp', or 'ignored' (matched only an out-of-bucket ground truth)."""
    order = sorted(range(len(pred_masks)), key=lambda i: (-confidences[i], i))
    gt_used = [False] * len(gt_masks)
    out = []
    for pi in order:
        best_gt = -1
        best_iou = -1.0
        for gi in range(len(gt_masks)):
            if gt_used[gi] or not keep_gt[gi]:
                continue
            v = float(iou_matrix[pi, gi])
            if v >= threshold and v > best_iou:  # ties keep the lower gt index
                best_iou = v
                best_gt = gi
        if best_gt >= 0:
            gt_used[best_gt] = True
            out.append((pi, "tp"))
            continue
        ignored_gt = -1
        for gi in range(len(gt_masks)):
            if gt_used[gi] or keep_gt[gi]:
                continue
            if iou_matrix[pi, gi] >= threshold:
                ignored_gt = gi
                break
        if ignored_gt >= 0:
            gt_used[ignored_gt] = True
            out.append((pi, "ignored"))
        else:
            out.append((pi, "fp"))
    return out


def instance_ap(
    preds: list[InstanceSet],
    gts: list[list[BinaryMask]],
    gt_areas: list[list[float]] | None = None,
    interpolation: str = "101",
) -> InstanceEvalReport:
    """Instance AP over IoU thresholds 0.50:0.05:0.95 with COCO size buckets.

    `preds` and `gts` are aligned by sample. Ground truths outside a size
    bucket are ignored for that bucket: predictions matching only an ignored
    ground truth are excluded from both TP and FP. `gt_areas` optionally
    overrides mask pixel areas (e.g. original-resolution areas).
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} prediction sets vs {len(gts)} ground-truth sets")
    if gt_areas is not None and (
        len(gt_areas) != len(gts)
        or any(len(a) != len(g) for a, g in zip(gt_areas, gts))
    ):
        raise ValueError("gt_areas must align with gts")

    per_sample = []
    for si, (inst, gt_list) in enumerate(zip(preds, gts)):
        masks = [m for m, _ in inst]
        confs = [c for _, c in inst]
        areas = (
            [float(a) for a in gt_areas[si]]
            if gt_areas is not None
            else [float(g.area()) for g in gt_list]
        )
        matrix = np.zeros((len(masks), len(gt_list)), dtype=np.float64)
        for pi, pm in enumerate(masks):
            for gi, gm in enumerate(gt_list):
                _check_pair(pm, gm)
                matrix[pi, gi] = _pair_iou(pm, gm)
        per_sample.append((masks, confs, gt_list, areas, matrix))

    def bucket_ap(bucket: str, threshold: float, want_curve: bool) -> ThresholdCurve:
        records = []
        n_gt = 0
        for si, (masks, confs, gt_list, areas, matrix) in enumerate(per_sample):
            keep = [_bucket_keep(a, bucket) for a in areas]
            n_gt += sum(keep)
            for pi, kind in _match_sample(masks, confs, gt_list, keep, threshold, matrix):
                if kind == "ignored":
                    continue
                records.append((confs[pi], si, pi, kind == "tp"))
        ap, precisions, recalls, tp, fp = _ap_from_records(records, n_gt, interpolation)
        return ThresholdCurve(
            threshold=threshold,
            ap=ap,
            n_gt=n_gt,
            tp=tp,
            fp=fp,
            precisions=tuple(precisions) if want_curve else (),
            recalls=tuple(recalls) if want_curve else (),
        )

    curves = tuple(bucket_ap("all", t, want_curve=True) for t in IOU_THRESHOLDS)
    by_threshold = {c.threshold: c.ap for c in curves}
    size_means = {
        bucket: float(
            np.mean([bucket_ap(bucket, t, want_curve=False).ap for t in IOU_THRESHOLDS])
        )
        for bucket in ("small", "medium", "large")
    }
    return InstanceEvalReport(
        ap50=by_threshold[0.50],
        ap75=by_threshold[0.75],
        map=float(np.mean([c.ap for c in curves])),
        ap_s=size_means["small"],
        ap_m=size_means["medium"],
        ap_l=size_means["large"],
        per_threshold=curves,
    )
