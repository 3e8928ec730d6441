"""
Deterministic SVG charts.

Charts are emitted as plain text so repeated runs produce identical
bytes; the only variable part is a version comment on the second line.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

from vinecc import __version__, constants
from vinecc.errors import ArgumentError

logger = logging.getLogger(__name__)

_PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52")


@dataclass(frozen=True)
class BoxStats:
    """Five-number boxplot summary with Tukey whiskers."""
    q1: float
    median: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: Tuple[float, ...]


def box_stats(values: Sequence[float], whisker: float = constants.DEFAULT_IQR_MULTIPLIER) -> BoxStats:
    """
    Boxplot statistics.

    Whiskers end at the most extreme data points within whisker * IQR of
    the box; everything beyond is an outlier.

    Raises:
        ArgumentError: On an empty sample
    """
    arr = np.sort(np.asarray(values, dtype=np.float64))
    if arr.size == 0:
        raise ArgumentError("Boxplot needs at least one value")
    q1, median, q3 = np.percentile(arr, [25, 50, 75], method=constants.DEFAULT_PERCENTILE_METHOD)
    iqr = q3 - q1
    low_fence, high_fence = q1 - whisker * iqr, q3 + whisker * iqr
    inside = arr[(arr >= low_fence) & (arr <= high_fence)]
    return BoxStats(
        q1=float(q1),
        median=float(median),
        q3=float(q3),
        whisker_low=float(inside.min()),
        whisker_high=float(inside.max()),
        outliers=tuple(float(v) for v in arr[(arr < low_fence) | (arr > high_fence)]),
    )


def log10_areas(areas: Sequence[int]) -> List[float]:
    """Base-10 log of the positive areas."""
    return [math.log10(a) for a in areas if a > 0]


class SvgCanvas:
    """Accumulates SVG elements inside a fixed plot frame."""

    def __init__(
        self,
        title: str,
        width: int = constants.PLOT_WIDTH,
        height: int = constants.PLOT_HEIGHT,
        margin: int = constants.PLOT_MARGIN,
    ):
        self.width = width
        self.height = height
        self.margin = margin
        self.parts: List[str] = []
        self.title = title

    @property
    def left(self) -> float:
        return float(self.margin)

    @property
    def right(self) -> float:
        return float(self.width - self.margin / 2)

    @property
    def top(self) -> float:
        return float(self.margin / 2)

    @property
    def bottom(self) -> float:
        return float(self.height - self.margin)

    def line(self, x1: float, y1: float, x2: float, y2: float, stroke: str = "#333", extra: str = "") -> None:
        self.parts.append(
            f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" stroke="{stroke}"{extra}/>'
        )

    def rect(self, x: float, y: float, w: float, h: float, fill: str, stroke: str = "#333") -> None:
        self.parts.append(
            f'<rect x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" height="{h:.2f}" fill="{fill}" stroke="{stroke}"/>'
        )

    def circle(self, cx: float, cy: float, r: float, fill: str) -> None:
        self.parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r:.2f}" fill="{fill}"/>')

    def polyline(self, points: Sequence[Tuple[float, float]], stroke: str) -> None:
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        self.parts.append(f'<polyline points="{coords}" fill="none" stroke="{stroke}" stroke-width="2"/>')

    def text(self, x: float, y: float, label: str, anchor: str = "middle", size: int = 12) -> None:
        self.parts.append(
            f'<text x="{x:.2f}" y="{y:.2f}" text-anchor="{anchor}" font-size="{size}">{escape(label)}</text>'
        )

    def axes(self, x_label: str, y_label: str) -> None:
        self.line(self.left, self.bottom, self.right, self.bottom)
        self.line(self.left, self.top, self.left, self.bottom)
        self.text((self.left + self.right) / 2, self.height - 12, x_label)
        self.parts.append(
            f'<text x="14.00" y="{(self.top + self.bottom) / 2:.2f}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 14.00 {(self.top + self.bottom) / 2:.2f})">{escape(y_label)}</text>'
        )

    def y_ticks(self, lo: float, hi: float, count: int = 5) -> None:
        for value in np.linspace(lo, hi, count):
            y = self.scale_y(float(value), lo, hi)
            self.line(self.left - 4, y, self.left, y)
            self.text(self.left - 6, y + 4, f"{value:.2f}", anchor="end", size=10)

    def x_ticks(self, lo: float, hi: float, count: int = 5) -> None:
        for value in np.linspace(lo, hi, count):
            x = self.scale_x(float(value), lo, hi)
            self.line(x, self.bottom, x, self.bottom + 4)
            self.text(x, self.bottom + 16, f"{value:.2f}", size=10)

    def scale_x(self, value: float, lo: float, hi: float) -> float:
        span = hi - lo or 1.0
        return self.left + (value - lo) / span * (self.right - self.left)

    def scale_y(self, value: float, lo: float, hi: float) -> float:
        span = hi - lo or 1.0
        return self.bottom - (value - lo) / span * (self.bottom - self.top)

    def render(self) -> str:
        header = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f"<!-- {constants.APP_NAME} {__version__} -->",
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'viewBox="0 0 {self.width} {self.height}">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" fill="white"/>',
            f'<text x="{self.width / 2:.2f}" y="18.00" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
        ]
        return "\n".join(header + self.parts + ["</svg>"]) + "\n"


def _padded_range(values: Sequence[float]) -> Tuple[float, float]:
    lo, hi = float(min(values)), float(max(values))
    if lo == hi:
        return lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def histogram_svg(histogram: Dict[int, int], title: str, x_label: str) -> str:
    """Bar chart of an integer histogram (value -> frequency)."""
    canvas = SvgCanvas(title)
    keys = sorted(histogram)
    top = max(histogram.values(), default=0) or 1
    canvas.axes(x_label, "images")
    canvas.y_ticks(0.0, float(top))
    if keys:
        slot = (canvas.right - canvas.left) / len(keys)
        for i, key in enumerate(keys):
            x = canvas.left + i * slot
            y = canvas.scale_y(float(histogram[key]), 0.0, float(top))
            canvas.rect(x + slot * 0.1, y, slot * 0.8, canvas.bottom - y, fill=_PALETTE[0])
            canvas.text(x + slot / 2, canvas.bottom + 16, str(key), size=10)
    return canvas.render()


def boxplot_svg(groups: Sequence[Tuple[str, Sequence[float]]], title: str, y_label: str) -> str:
    """
    Side-by-side boxplots.

    Args:
        groups: (label, values) per box
        title: Chart title
        y_label: Value axis label

    Raises:
        ArgumentError: If any group is empty
    """
    if not groups:
        raise ArgumentError("Boxplot needs at least one group")
    stats = [(label, box_stats(values)) for label, values in groups]
    all_values = [v for _, values in groups for v in values]
    lo, hi = _padded_range(all_values)

    canvas = SvgCanvas(title)
    canvas.axes("", y_label)
    canvas.y_ticks(lo, hi)
    slot = (canvas.right - canvas.left) / len(stats)

    def y(v: float) -> float:
        return canvas.scale_y(v, lo, hi)

    for i, (label, s) in enumerate(stats):
        center = canvas.left + (i + 0.5) * slot
        half = slot * 0.2
        color = _PALETTE[i % len(_PALETTE)]
        canvas.line(center, y(s.whisker_low), center, y(s.q1))
        canvas.line(center, y(s.q3), center, y(s.whisker_high))
        canvas.line(center - half / 2, y(s.whisker_low), center + half / 2, y(s.whisker_low))
        canvas.line(center - half / 2, y(s.whisker_high), center + half / 2, y(s.whisker_high))
        canvas.rect(center - half, y(s.q3), 2 * half, y(s.q1) - y(s.q3), fill=color)
        canvas.line(center - half, y(s.median), center + half, y(s.median), stroke="#000")
        for v in s.outliers:
            canvas.circle(center, y(v), 2.5, fill="#333")
        canvas.text(center, canvas.bottom + 16, label)
    return canvas.render()


def closure_curve_svg(
    observations: Sequence[Tuple[float, float]],
    curve: Optional[Sequence[Tuple[float, float]]],
    title: str = "Cluster closure over time",
) -> str:
    """
    Scatter of (time, closure) observations with an optional fitted curve.

    Raises:
        ArgumentError: If there are no observations
    """
    if not observations:
        raise ArgumentError("Closure plot needs at least one observation")
    xs = [t for t, _ in observations] + [t for t, _ in curve or ()]
    ys = [v for _, v in observations] + [v for _, v in curve or ()]
    x_lo, x_hi = _padded_range(xs)
    y_lo, y_hi = _padded_range(ys)

    canvas = SvgCanvas(title)
    canvas.axes("weeks", "closure (%)")
    canvas.x_ticks(x_lo, x_hi)
    canvas.y_ticks(y_lo, y_hi)
    for t, v in observations:
        canvas.circle(canvas.scale_x(t, x_lo, x_hi), canvas.scale_y(v, y_lo, y_hi), 3.0, fill=_PALETTE[0])
    if curve:
        canvas.polyline(
            [(canvas.scale_x(t, x_lo, x_hi), canvas.scale_y(v, y_lo, y_hi)) for t, v in curve],
            stroke=_PALETTE[3],
        )
    return canvas.render()
