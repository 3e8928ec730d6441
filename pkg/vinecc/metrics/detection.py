"""
Instance segmentation average precision (COCO conventions).

Detections are matched greedily per image in score order to the
unmatched ground truth with the highest mask IoU at or above the
threshold. AP is the mean of the precision envelope sampled at 101
recall points. Size buckets restrict which ground truths count; a
detection matched to an out-of-bucket ground truth, or unmatched and
itself out of bucket, is ignored rather than counted as a false positive.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from vinecc import constants
from vinecc.annotations.dataset import DatasetIndex
from vinecc.annotations.masks import BinaryMask, MaskLike, as_binary_mask
from vinecc.errors import ArgumentError

logger = logging.getLogger(__name__)

AREA_BUCKETS = ("all", "small", "medium", "large")


@dataclass(frozen=True)
class Detection:
    """A scored predicted instance mask."""
    mask: MaskLike = field(repr=False)
    score: float
    image_id: int
    id: int = 0

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ArgumentError(f"Detection {self.id} has a non-finite score")
        object.__setattr__(self, "mask", as_binary_mask(self.mask))


@dataclass(frozen=True)
class GroundTruth:
    """A reference instance mask."""
    mask: MaskLike = field(repr=False)
    image_id: int
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mask", as_binary_mask(self.mask))


@dataclass(frozen=True)
class ApReport:
    """
    AP summary, every value in [0, 1] or None when undefined.

    Attributes:
        map: Mean AP over all IoU thresholds
        ap50: AP at IoU 0.50
        ap75: AP at IoU 0.75
        ap_small: mAP restricted to ground truths below 32x32 px
        ap_medium: mAP restricted to ground truths of 32x32 to 96x96 px
        ap_large: mAP restricted to ground truths above 96x96 px
        per_threshold: (threshold, AP) for each IoU threshold
    """
    map: Optional[float]
    ap50: Optional[float]
    ap75: Optional[float]
    ap_small: Optional[float]
    ap_medium: Optional[float]
    ap_large: Optional[float]
    per_threshold: Tuple[Tuple[float, Optional[float]], ...] = ()

    def to_dict(self, scale: float = 1.0) -> Dict[str, object]:
        def scaled(v: Optional[float]) -> Optional[float]:
            return None if v is None else v * scale

        return {
            "map": scaled(self.map),
            "ap50": scaled(self.ap50),
            "ap75": scaled(self.ap75),
            "ap_small": scaled(self.ap_small),
            "ap_medium": scaled(self.ap_medium),
            "ap_large": scaled(self.ap_large),
            "per_threshold": {f"{t:.2f}": scaled(v) for t, v in self.per_threshold},
        }


def in_bucket(area: int, bucket: str) -> bool:
    """Whether a mask area falls in a size bucket."""
    if bucket == "all":
        return True
    if bucket == "small":
        return area < constants.SMALL_AREA_MAX
    if bucket == "medium":
        return constants.SMALL_AREA_MAX <= area <= constants.LARGE_AREA_MIN
    if bucket == "large":
        return area > constants.LARGE_AREA_MIN
    raise ArgumentError(f"Unknown area bucket {bucket!r}")


def iou_matrix(dets: Sequence[BinaryMask], gts: Sequence[BinaryMask]) -> NDArray[np.float64]:
    """Pairwise mask IoU, shape (len(dets), len(gts))."""
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)), dtype=np.float64)
    shapes = {m.shape for m in dets} | {m.shape for m in gts}
    if len(shapes) > 1:
        raise ArgumentError(f"Masks of one image differ in size: {sorted(shapes)}")
    d = np.stack([m.data.ravel() for m in dets]).astype(np.float64)
    g = np.stack([m.data.ravel() for m in gts]).astype(np.float64)
    inter = d @ g.T
    union = d.sum(axis=1)[:, None] + g.sum(axis=1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / union, 0.0)
    return iou


@dataclass
class _ImageEval:
    """Per-image inputs shared by every threshold and bucket."""
    image_id: int
    dets: List[Detection]
    det_areas: List[int]
    gt_areas: List[int]
    ious: NDArray[np.float64]


def _prepare_image(
    image_id: int,
    dets: List[Detection],
    gts: List[GroundTruth],
    max_detections: Optional[int],
) -> _ImageEval:
    dets = sorted(dets, key=lambda d: (-d.score, d.id))
    if max_detections is not None:
        dets = dets[:max_detections]
    gts = sorted(gts, key=lambda g: g.id)
    return _ImageEval(
        image_id=image_id,
        dets=dets,
        det_areas=[d.mask.area for d in dets],
        gt_areas=[g.mask.area for g in gts],
        ious=iou_matrix([d.mask for d in dets], [g.mask for g in gts]),
    )


def _match_image(ev: _ImageEval, threshold: float, bucket: str) -> List[Tuple[float, int, int, bool]]:
    """
    Greedy matching for one image.

    Returns:
        (score, image id, detection id, is_true_positive) for every
        detection that is not ignored
    """
    gt_ignored = [not in_bucket(a, bucket) for a in ev.gt_areas]
    # Non-ignored ground truths are tried first.
    gt_order = sorted(range(len(ev.gt_areas)), key=lambda g: gt_ignored[g])
    gt_matched = [False] * len(ev.gt_areas)
    limit = min(threshold, 1 - 1e-10)

    out = []
    for d, det in enumerate(ev.dets):
        best_iou, best = limit, -1
        for g in gt_order:
            if gt_matched[g]:
                continue
            if best > -1 and not gt_ignored[best] and gt_ignored[g]:
                break
            if ev.ious[d, g] < best_iou:
                continue
            best_iou, best = ev.ious[d, g], g

        if best > -1:
            gt_matched[best] = True
            if not gt_ignored[best]:
                out.append((det.score, ev.image_id, det.id, True))
        elif in_bucket(ev.det_areas[d], bucket):
            out.append((det.score, ev.image_id, det.id, False))
    return out


def _interpolated_ap(matches: List[Tuple[float, int, int, bool]], n_gt: int) -> float:
    """101-point interpolated AP from non-ignored detections."""
    if not matches:
        return 0.0
    matches = sorted(matches, key=lambda m: (-m[0], m[1], m[2]))
    tp_flags = np.array([m[3] for m in matches], dtype=bool)
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    precision = np.maximum.accumulate(precision[::-1])[::-1]

    recall_points = np.linspace(0.0, 1.0, constants.RECALL_POINTS)
    idx = np.searchsorted(recall, recall_points, side="left")
    sampled = np.where(idx < len(precision), precision[np.minimum(idx, len(precision) - 1)], 0.0)
    return float(np.mean(sampled))


def _bucket_ap(
    evals: Sequence[_ImageEval],
    threshold: float,
    bucket: str,
) -> Optional[float]:
    n_gt = sum(1 for ev in evals for a in ev.gt_areas if in_bucket(a, bucket))
    if n_gt == 0:
        return None
    matches = [m for ev in evals for m in _match_image(ev, threshold, bucket)]
    return _interpolated_ap(matches, n_gt)


def _mean_or_none(values: Sequence[Optional[float]]) -> Optional[float]:
    if not values or any(v is None for v in values):
        return None
    return float(np.mean(values))


def average_precision(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    iou_thresholds: Sequence[float] = constants.IOU_THRESHOLDS,
    max_detections: Optional[int] = None,
    jobs: int = 1,
) -> ApReport:
    """
    Evaluate detections against ground truths.

    Args:
        dets: Scored detections (any number of images)
        gts: Ground-truth masks
        iou_thresholds: Thresholds averaged into map
        max_detections: Keep only the top-scoring detections per image
        jobs: Worker threads for the per-image IoU computation

    Returns:
        ApReport; values are None where no ground truth exists

    Raises:
        ArgumentError: Bad thresholds or masks of mismatched size
    """
    thresholds = tuple(float(t) for t in iou_thresholds)
    if not thresholds or any(not 0.0 < t <= 1.0 for t in thresholds):
        raise ArgumentError(f"IoU thresholds must lie in (0, 1], got {thresholds}")
    if max_detections is not None and max_detections < 1:
        raise ArgumentError(f"max_detections must be >= 1, got {max_detections}")

    by_image_dets: Dict[int, List[Detection]] = {}
    by_image_gts: Dict[int, List[GroundTruth]] = {}
    for d in dets:
        by_image_dets.setdefault(d.image_id, []).append(d)
    for g in gts:
        by_image_gts.setdefault(g.image_id, []).append(g)
    image_ids = sorted(set(by_image_dets) | set(by_image_gts))

    def prepare(image_id: int) -> _ImageEval:
        return _prepare_image(
            image_id, by_image_dets.get(image_id, []), by_image_gts.get(image_id, []), max_detections
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            evals = list(pool.map(prepare, image_ids))
    else:
        evals = [prepare(i) for i in image_ids]

    per_bucket: Dict[str, List[Optional[float]]] = {
        bucket: [_bucket_ap(evals, t, bucket) for t in thresholds] for bucket in AREA_BUCKETS
    }
    per_threshold = tuple(zip(thresholds, per_bucket["all"]))

    def at(threshold: float) -> Optional[float]:
        for t, v in per_threshold:
            if abs(t - threshold) < 1e-9:
                return v
        return None

    report = ApReport(
        map=_mean_or_none(per_bucket["all"]),
        ap50=at(0.5),
        ap75=at(0.75),
        ap_small=_mean_or_none(per_bucket["small"]),
        ap_medium=_mean_or_none(per_bucket["medium"]),
        ap_large=_mean_or_none(per_bucket["large"]),
        per_threshold=per_threshold,
    )
    logger.info(
        f"AP over {len(image_ids)} image(s), {len(dets)} detection(s), {len(gts)} ground truth(s): "
        f"map={report.map}"
    )
    return report


def ground_truths_from_index(ds: DatasetIndex) -> List[GroundTruth]:
    """Cluster annotations of a dataset as ground truths."""
    return [
        GroundTruth(mask=c.mask, image_id=img.id, id=c.id)
        for img in ds.images
        for c in img.clusters
    ]


def detections_from_index(ds: DatasetIndex) -> List[Detection]:
    """
    Scored cluster annotations of a prediction dataset as detections.

    Raises:
        ArgumentError: If a prediction has no score
    """
    out = []
    for img in ds.images:
        for c in img.clusters:
            if c.score is None:
                raise ArgumentError(f"Prediction {c.id} in image {img.id} has no score")
            out.append(Detection(mask=c.mask, score=c.score, image_id=img.id, id=c.id))
    return out
