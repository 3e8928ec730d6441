"""
Heatmap to berry keypoint decoding.

The decoder upsamples the model output back to image resolution with
bilinear interpolation, suppresses non-maxima with a max-pool window,
thresholds the survivors and keeps the top K by score.
"""

import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.ndimage import maximum_filter

from vinecc import constants
from vinecc.errors import ArgumentError
from vinecc.raster.heatmap import Heatmap

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KeyPoint:
    """A decoded berry centroid in image pixel coordinates."""
    x: float
    y: float
    score: float


def _source_coords(n_in: int, factor: int):
    """Half-pixel aligned source positions for one axis, clamped to borders."""
    out = np.arange(n_in * factor, dtype=np.float64)
    src = (out + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def upsample_bilinear(h: Heatmap, factor: int) -> Heatmap:
    """
    Upsample a heatmap by an integer factor with bilinear interpolation.

    Output cell i samples input coordinate (i + 0.5) / factor - 0.5,
    clamped to the border cells.

    Args:
        h: Input heatmap
        factor: Integer scale, >= 1

    Returns:
        Heatmap of size (height * factor, width * factor); values stay
        within the input's [min, max]

    Raises:
        ArgumentError: If factor < 1
    """
    if int(factor) != factor or factor < 1:
        raise ArgumentError(f"Upsampling factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if factor == 1:
        return h

    v = h.values
    r0, r1, wr = _source_coords(h.height, factor)
    c0, c1, wc = _source_coords(h.width, factor)

    rows = v[r0, :] + wr[:, None] * (v[r1, :] - v[r0, :])
    out = rows[:, c0] + wc[None, :] * (rows[:, c1] - rows[:, c0])
    out = np.clip(out, v.min(), v.max())

    return Heatmap(values=out, stride_factor=max(1, h.stride_factor // factor))


def local_maxima(values: NDArray[np.float64], window: int = constants.DEFAULT_NMS_WINDOW) -> NDArray[np.bool_]:
    """
    Cells that equal the maximum of their window.

    Windows are truncated at the borders; "nearest" padding only repeats
    border cells that already lie inside the truncated window, so the
    maximum is unchanged.
    """
    pooled = maximum_filter(values, size=window, mode="nearest")
    return values >= pooled


def extract_keypoints(
    h: Heatmap,
    tau: float = constants.DEFAULT_TAU,
    k: int = constants.DEFAULT_TOP_K,
    window: int = constants.DEFAULT_NMS_WINDOW,
) -> List[KeyPoint]:
    """
    Decode keypoints from an image-resolution heatmap.

    A cell is emitted iff its value exceeds tau and is >= every value in
    its window. Plateaus therefore yield one point per plateau cell.
    Results are ordered by score descending, then y, then x, and cut to k.

    Args:
        h: Heatmap already upsampled to image resolution
        tau: Confidence threshold, 0 <= tau < 1
        k: Maximum number of points, >= 1
        window: Odd max-pool window size

    Returns:
        Keypoints (possibly empty)
    """
    if not 0.0 <= tau < 1.0:
        raise ArgumentError(f"tau must be in [0, 1), got {tau}")
    if k < 1:
        raise ArgumentError(f"k must be >= 1, got {k}")
    if window < 1 or window % 2 == 0:
        raise ArgumentError(f"window must be a positive odd integer, got {window}")

    values = h.values
    keep = local_maxima(values, window) & (values > tau)
    ys, xs = np.nonzero(keep)
    scores = values[ys, xs]

    order = np.lexsort((xs, ys, -scores))[:k]
    logger.debug(f"{ys.size} candidates above tau={tau}, keeping {order.size}")

    return [
        KeyPoint(x=float(xs[i]), y=float(ys[i]), score=float(scores[i]))
        for i in order
    ]


def decode_heatmap(
    h: Heatmap,
    factor: int = constants.DEFAULT_UPSAMPLE_FACTOR,
    tau: float = constants.DEFAULT_TAU,
    k: int = constants.DEFAULT_TOP_K,
    window: int = constants.DEFAULT_NMS_WINDOW,
) -> List[KeyPoint]:
    """Upsample then extract keypoints (threshold applied after upsampling)."""
    return extract_keypoints(upsample_bilinear(h, factor), tau=tau, k=k, window=window)


def keypoints_to_csv(points: Sequence[KeyPoint]) -> str:
    """Render keypoints as CSV with header x,y,score."""
    lines = [",".join(constants.KEYPOINTS_CSV_HEADER)]
    lines.extend(f"{p.x!r},{p.y!r},{p.score!r}" for p in points)
    return "\n".join(lines) + "\n"


def keypoints_to_prompts(points: Sequence[KeyPoint]) -> List[Dict[str, Any]]:
    """
    Wrap each keypoint as a single-point foreground prompt.

    Returns:
        One {"point_coords": [[x, y]], "point_labels": [1], "score": s}
        entry per keypoint, in keypoint order
    """
    return [
        {"point_coords": [[p.x, p.y]], "point_labels": [1], "score": p.score}
        for p in points
    ]


def prompts_to_json(points: Sequence[KeyPoint]) -> str:
    """Serialize point prompts as deterministic JSON."""
    return json.dumps(keypoints_to_prompts(points), indent=2) + "\n"
