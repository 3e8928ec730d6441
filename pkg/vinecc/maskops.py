"""
Mask-set arithmetic and IQR-based outlier removal.

The IQR filter drops berry masks whose area is atypical for the image:
areas are log-transformed, min-max normalized, and kept when they fall
within [Q1 - m*IQR, Q3 + m*IQR] (m = 1.5 by default).
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence, Tuple

import numpy as np

from vinecc import constants
from vinecc.annotations.masks import BinaryMask, Rle, rle_decode, rle_encode
from vinecc.annotations.schema import check_maskset_document
from vinecc.errors import ArgumentError, FormatError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MaskSet:
    """
    An ordered set of same-sized masks with cached areas.

    Attributes:
        masks: Masks in input order
        areas: Set-pixel count of each mask (computed at construction)
    """
    masks: Tuple[BinaryMask, ...] = ()
    areas: Tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        masks = tuple(self.masks)
        shapes = {m.shape for m in masks}
        if len(shapes) > 1:
            raise ArgumentError(f"Masks in a set must share dimensions, got {sorted(shapes)}")
        object.__setattr__(self, "masks", masks)
        object.__setattr__(self, "areas", tuple(mask_area(m) for m in masks))

    def __len__(self) -> int:
        return len(self.masks)

    def __iter__(self):
        return iter(self.masks)

    @property
    def shape(self) -> Optional[Tuple[int, int]]:
        """(height, width) shared by all masks, None for an empty set."""
        return self.masks[0].shape if self.masks else None

    def subset(self, indices: Sequence[int]) -> "MaskSet":
        """Masks at the given indices, in the given order."""
        return MaskSet(tuple(self.masks[i] for i in indices))

    def stack(self) -> np.ndarray:
        """Masks as a (n, height, width) boolean array."""
        if not self.masks:
            return np.zeros((0, 0, 0), dtype=bool)
        return np.stack([m.data for m in self.masks])


@dataclass(frozen=True)
class IqrReport:
    """Outcome of one IQR filtering pass."""
    kept: Tuple[int, ...]
    removed: Tuple[int, ...]
    q1: Optional[float] = None
    q3: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    degenerate: bool = False


def mask_area(m: BinaryMask) -> int:
    """Number of set pixels in a mask."""
    return int(np.count_nonzero(m.data))


def iqr_keep_indices(
    areas: Sequence[int],
    multiplier: float = constants.DEFAULT_IQR_MULTIPLIER,
    epsilon: float = constants.DEFAULT_LOG_EPSILON,
    method: str = constants.DEFAULT_PERCENTILE_METHOD,
) -> IqrReport:
    """
    Decide which areas survive IQR filtering.

    When all log-areas are equal the normalization is undefined and every
    index is kept.

    Args:
        areas: Mask areas in pixels
        multiplier: Fence distance in IQRs
        epsilon: Offset inside the logarithm (guards zero areas)
        method: numpy percentile method ("linear" = rank (n-1)p/100)

    Returns:
        IqrReport with kept and removed indices in input order
    """
    n = len(areas)
    if n == 0:
        return IqrReport(kept=(), removed=())

    logs = np.log(np.asarray(areas, dtype=np.float64) + epsilon)
    lo, hi = logs.min(), logs.max()
    if hi == lo:
        return IqrReport(kept=tuple(range(n)), removed=(), degenerate=True)

    normalized = (logs - lo) / (hi - lo)
    q1, q3 = np.percentile(normalized, [25, 75], method=method)
    iqr = q3 - q1
    lower, upper = q1 - multiplier * iqr, q3 + multiplier * iqr
    valid = (normalized >= lower) & (normalized <= upper)

    return IqrReport(
        kept=tuple(int(i) for i in np.flatnonzero(valid)),
        removed=tuple(int(i) for i in np.flatnonzero(~valid)),
        q1=float(q1),
        q3=float(q3),
        lower=float(lower),
        upper=float(upper),
    )


def filter_masks_iqr_report(
    ms: MaskSet,
    multiplier: float = constants.DEFAULT_IQR_MULTIPLIER,
    epsilon: float = constants.DEFAULT_LOG_EPSILON,
    method: str = constants.DEFAULT_PERCENTILE_METHOD,
) -> Tuple[MaskSet, IqrReport]:
    """Filter a mask set and also return the decision details."""
    report = iqr_keep_indices(ms.areas, multiplier, epsilon, method)
    if report.degenerate:
        logger.debug(f"All {len(ms)} mask areas equal; IQR filter keeps everything")
    elif report.removed:
        logger.info(f"IQR filter removed {len(report.removed)} of {len(ms)} masks")
    return ms.subset(report.kept), report


def filter_masks_iqr(
    ms: MaskSet,
    multiplier: float = constants.DEFAULT_IQR_MULTIPLIER,
    epsilon: float = constants.DEFAULT_LOG_EPSILON,
    method: str = constants.DEFAULT_PERCENTILE_METHOD,
) -> MaskSet:
    """
    Remove masks with outlying areas.

    Output preserves input order and is a subsequence of the input.

    Args:
        ms: Mask set (may be empty)
        multiplier: Fence distance in IQRs
        epsilon: Offset inside the logarithm
        method: numpy percentile method

    Returns:
        Filtered MaskSet
    """
    filtered, _ = filter_masks_iqr_report(ms, multiplier, epsilon, method)
    return filtered


def union_area(ms: MaskSet) -> int:
    """Pixels covered by at least one mask."""
    if not ms.masks:
        return 0
    return int(np.count_nonzero(np.logical_or.reduce(ms.stack(), axis=0)))


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    """
    Intersection over union of two masks (0 when both are empty).

    Raises:
        ArgumentError: If the masks differ in size
    """
    if a.shape != b.shape:
        raise ArgumentError(f"Mask sizes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a.data | b.data)
    if union == 0:
        return 0.0
    return float(np.count_nonzero(a.data & b.data) / union)


# ── Persistence ───────────────────────────────────────────────────────────────

def load_maskset(data: bytes) -> MaskSet:
    """
    Load a JSON array of COCO RLE objects.

    Raises:
        FormatError: On malformed JSON or RLE objects
    """
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError("Mask set is not valid UTF-8", offset=e.start)
    try:
        objects = json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode("utf-8"))
        raise FormatError(f"Malformed mask set JSON: {e.msg}", offset=offset)
    return maskset_from_json(objects)


def maskset_from_json(objects: Any) -> MaskSet:
    """Build a MaskSet from decoded RLE objects."""
    check_maskset_document(objects)
    return MaskSet(tuple(rle_decode(Rle.from_json(obj)) for obj in objects))


def dump_maskset(ms: MaskSet, compressed: bool = True) -> str:
    """Serialize a MaskSet as a JSON array of RLE objects."""
    objects = [rle_encode(m).to_json(compressed=compressed) for m in ms.masks]
    return json.dumps(objects) + "\n"
