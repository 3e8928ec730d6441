"""
Visual cluster closure (VCC).

VCC is the share of a cluster's pixels covered by berries, in percent.
By default the berry numerator is the union of the berry masks assigned
to the cluster, intersected with the cluster mask, so VCC never exceeds
100. The "literal" mode sums the assigned berry areas without clipping.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from vinecc import constants
from vinecc.annotations.dataset import ClusterAnnotation
from vinecc.annotations.masks import BinaryMask
from vinecc.errors import ArgumentError, EmptyMaskError, FormatError, ValidationError
from vinecc.maskops import MaskSet, filter_masks_iqr

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClosureRecord:
    """Closure of one cluster in one image at one capture time."""
    image_id: int
    cluster_id: int
    berry_pixels: int
    cluster_pixels: int
    vcc: float
    capture_time: float

    def __post_init__(self):
        if self.cluster_pixels <= 0:
            raise ArgumentError(f"cluster_pixels must be > 0, got {self.cluster_pixels}")


@dataclass(frozen=True)
class SeriesPoint:
    """All closure values observed at one capture time."""
    time: float
    mean_vcc: float
    values: Tuple[float, ...]
    keys: Tuple[Tuple[int, int], ...] = field(repr=False, default=())


@dataclass(frozen=True)
class ClosureSeries:
    """Closure over time, times strictly increasing."""
    points: Tuple[SeriesPoint, ...]

    def means(self) -> List[Tuple[float, float]]:
        """(time, mean vcc) pairs."""
        return [(p.time, p.mean_vcc) for p in self.points]

    def observations(self) -> List[Tuple[float, float]]:
        """(time, vcc) for every individual cluster value."""
        return [(p.time, v) for p in self.points for v in p.values]


@dataclass
class Assignment:
    """Berry masks grouped by the cluster they overlap most."""
    by_cluster: Dict[int, MaskSet]
    indices: Dict[int, List[int]]
    dropped: List[int] = field(default_factory=list)


def assign_berries_to_clusters(
    berry_masks: MaskSet,
    clusters: Sequence[ClusterAnnotation],
) -> Assignment:
    """
    Assign each berry mask to the cluster it overlaps most.

    Ties go to the lower cluster id. Berries overlapping no cluster are
    dropped and reported by index.

    Args:
        berry_masks: Berry masks of one image
        clusters: Cluster annotations of the same image

    Returns:
        Assignment with one (possibly empty) MaskSet per cluster id
    """
    ordered = sorted(clusters, key=lambda c: c.id)
    indices: Dict[int, List[int]] = {c.id: [] for c in ordered}
    dropped: List[int] = []

    if ordered and len(berry_masks):
        cluster_stack = np.stack([c.mask.data for c in ordered])
        if cluster_stack.shape[1:] != berry_masks.shape:
            raise ArgumentError(
                f"Berry masks are {berry_masks.shape}, clusters are {cluster_stack.shape[1:]}"
            )
        for i, berry in enumerate(berry_masks.masks):
            overlap = np.count_nonzero(cluster_stack & berry.data, axis=(1, 2))
            best = int(np.argmax(overlap))
            if overlap[best] == 0:
                dropped.append(i)
            else:
                indices[ordered[best].id].append(i)
    else:
        dropped = list(range(len(berry_masks)))

    if dropped:
        logger.warning(f"{len(dropped)} berry mask(s) overlap no cluster and were dropped")

    return Assignment(
        by_cluster={cid: berry_masks.subset(idx) for cid, idx in indices.items()},
        indices=indices,
        dropped=dropped,
    )


def _covered(berries: MaskSet, cluster: np.ndarray) -> np.ndarray:
    if not len(berries):
        return np.zeros(cluster.shape, dtype=bool)
    return np.logical_or.reduce(berries.stack(), axis=0) & cluster


def berry_pixels(berries: MaskSet, cluster: np.ndarray, mode: str = "clipped") -> int:
    """
    Numerator of the closure ratio.

    Args:
        berries: Berry masks
        cluster: Boolean cluster mask array
        mode: "clipped" (union inside the cluster) or "literal" (sum of areas)
    """
    if mode == "literal":
        return int(sum(berries.areas))
    if mode != "clipped":
        raise ArgumentError(f"Unknown closure mode {mode!r}")
    return int(np.count_nonzero(_covered(berries, cluster)))


def vcc(berries: MaskSet, cluster: BinaryMask, mode: str = "clipped") -> float:
    """
    Visual cluster closure in percent.

    Args:
        berries: Berry masks (same size as the cluster)
        cluster: Cluster BinaryMask
        mode: "clipped" (default, result in [0, 100]) or "literal"

    Returns:
        100 * berry pixels / cluster pixels

    Raises:
        EmptyMaskError: If the cluster mask has no set pixel
    """
    cluster_pixels = cluster.area
    if cluster_pixels == 0:
        raise EmptyMaskError("Cannot compute closure of an empty cluster mask")
    if len(berries) and berries.shape != cluster.shape:
        raise ArgumentError(f"Berry masks are {berries.shape}, cluster is {cluster.shape}")
    return 100.0 * berry_pixels(berries, cluster.data, mode) / cluster_pixels


def image_closure(
    image_id: int,
    capture_time: float,
    clusters: Sequence[ClusterAnnotation],
    berries: MaskSet,
    mode: str = "clipped",
    iqr: bool = False,
    iqr_scope: str = "image",
    iqr_multiplier: float = constants.DEFAULT_IQR_MULTIPLIER,
    percentile_method: str = constants.DEFAULT_PERCENTILE_METHOD,
    epsilon: float = constants.DEFAULT_LOG_EPSILON,
) -> List[ClosureRecord]:
    """
    Closure records for every cluster of one image.

    With iqr=True the berry masks are IQR-filtered first, over the whole
    image (iqr_scope="image") or within each assigned cluster ("cluster").

    In clipped mode a berry pixel lying in several overlapping clusters is
    counted once, for the lowest cluster id whose assigned berries cover it,
    so the record numerators sum to at most the covered area of the image.

    Returns:
        One ClosureRecord per cluster, ordered by cluster id
    """
    if iqr and iqr_scope == "image":
        berries = filter_masks_iqr(berries, iqr_multiplier, epsilon, percentile_method)

    assignment = assign_berries_to_clusters(berries, clusters)

    if iqr and iqr_scope == "cluster":
        assignment.by_cluster = {
            cid: filter_masks_iqr(berries.subset(idx), iqr_multiplier, epsilon, percentile_method)
            for cid, idx in assignment.indices.items()
        }

    records = []
    claimed: Optional[np.ndarray] = None
    for cluster in sorted(clusters, key=lambda c: c.id):
        mask = cluster.mask
        if mask.area == 0:
            raise EmptyMaskError(f"Cluster {cluster.id} in image {image_id} has an empty mask")
        if mode != "clipped":
            numerator = berry_pixels(assignment.by_cluster[cluster.id], mask.data, mode)
        else:
            if claimed is None:
                claimed = np.zeros(mask.shape, dtype=bool)
            elif claimed.shape != mask.shape:
                raise ArgumentError(f"Cluster masks of image {image_id} differ in size")
            covered = _covered(assignment.by_cluster[cluster.id], mask.data) & ~claimed
            claimed |= covered
            numerator = int(np.count_nonzero(covered))
        records.append(ClosureRecord(
            image_id=image_id,
            cluster_id=cluster.id,
            berry_pixels=numerator,
            cluster_pixels=mask.area,
            vcc=100.0 * numerator / mask.area,
            capture_time=float(capture_time),
        ))
    logger.debug(f"Image {image_id}: {len(records)} cluster closure record(s)")
    return records


def image_vcc(records: Sequence[ClosureRecord], aggregate: str = "cluster_mean") -> Optional[float]:
    """
    Closure of a whole image from its cluster records.

    Args:
        records: Records of one image
        aggregate: "cluster_mean" (unweighted mean of cluster VCCs) or
            "pooled" (all berry pixels over all cluster pixels)

    Returns:
        Percent, or None when there are no records
    """
    if not records:
        return None
    if aggregate == "cluster_mean":
        return float(np.mean([r.vcc for r in records]))
    if aggregate == "pooled":
        return 100.0 * sum(r.berry_pixels for r in records) / sum(r.cluster_pixels for r in records)
    raise ArgumentError(f"Unknown closure aggregate {aggregate!r}")


def build_series(records: Sequence[ClosureRecord], aggregate: str = "cluster_mean") -> ClosureSeries:
    """
    Group closure records by capture time.

    Args:
        records: Closure records
        aggregate: How the per-time mean is formed (see image_vcc)

    Returns:
        ClosureSeries with times ascending; values within a time are
        ordered by (image id, cluster id)

    Raises:
        ValidationError: On a duplicate (image, cluster, time) triple
    """
    seen = set()
    duplicates = []
    by_time: Dict[float, List[ClosureRecord]] = {}
    for r in records:
        key = (r.image_id, r.cluster_id, r.capture_time)
        if key in seen:
            duplicates.append(key)
        seen.add(key)
        by_time.setdefault(r.capture_time, []).append(r)
    if duplicates:
        raise ValidationError("Duplicate (image, cluster, time) closure records", ids=duplicates)

    points = []
    for time in sorted(by_time):
        group = sorted(by_time[time], key=lambda r: (r.image_id, r.cluster_id))
        points.append(SeriesPoint(
            time=time,
            mean_vcc=image_vcc(group, aggregate),
            values=tuple(r.vcc for r in group),
            keys=tuple((r.image_id, r.cluster_id) for r in group),
        ))
    return ClosureSeries(points=tuple(points))


# ── CSV ───────────────────────────────────────────────────────────────────────

def records_to_csv(records: Sequence[ClosureRecord]) -> str:
    """Render closure records as CSV (floats written round-trip exact)."""
    lines = [",".join(constants.CLOSURE_CSV_HEADER)]
    for r in records:
        lines.append(
            f"{r.image_id},{r.cluster_id},{r.capture_time!r},"
            f"{r.berry_pixels},{r.cluster_pixels},{r.vcc!r}"
        )
    return "\n".join(lines) + "\n"


def records_from_csv(text: str) -> List[ClosureRecord]:
    """
    Parse closure records written by records_to_csv.

    Raises:
        FormatError: On a wrong header or an unparsable row
    """
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != constants.CLOSURE_CSV_HEADER:
        raise FormatError(f"Closure CSV header must be {','.join(constants.CLOSURE_CSV_HEADER)}")

    records = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(constants.CLOSURE_CSV_HEADER):
            raise FormatError(f"Closure CSV line {line_no}: expected 6 fields, got {len(row)}")
        try:
            records.append(ClosureRecord(
                image_id=int(row[0]),
                cluster_id=int(row[1]),
                capture_time=float(row[2]),
                berry_pixels=int(row[3]),
                cluster_pixels=int(row[4]),
                vcc=float(row[5]),
            ))
        except (ValueError, ArgumentError) as e:
            raise FormatError(f"Closure CSV line {line_no}: {e}")
    return records
