"""Tests for boxplot statistics and SVG chart output."""

import math

import pytest

from vinecc import __version__
from vinecc.errors import ArgumentError
from vinecc.plots import (
    SvgCanvas,
    box_stats,
    boxplot_svg,
    closure_curve_svg,
    histogram_svg,
    log10_areas,
)


class TestBoxStats:
    def test_single_outlier(self):
        stats = box_stats([1, 2, 3, 4, 100])
        assert (stats.q1, stats.median, stats.q3) == (2.0, 3.0, 4.0)
        assert (stats.whisker_low, stats.whisker_high) == (1.0, 4.0)
        assert stats.outliers == (100.0,)

    def test_equal_values_collapse(self):
        stats = box_stats([7, 7, 7])
        assert stats.q1 == stats.median == stats.q3 == stats.whisker_low == stats.whisker_high == 7.0
        assert stats.outliers == ()

    def test_empty(self):
        with pytest.raises(ArgumentError):
            box_stats([])


def test_log10_areas_skips_empty_masks():
    assert log10_areas([0, 10, 1000]) == [1.0, 3.0]


class TestSvg:
    def test_header_and_version_comment(self):
        svg = SvgCanvas("t").render()
        lines = svg.splitlines()
        assert lines[0].startswith("<?xml")
        assert lines[1] == f"<!-- vinecc {__version__} -->"
        assert svg.endswith("</svg>\n")

    def test_text_is_escaped(self):
        canvas = SvgCanvas("a < b & c")
        canvas.text(1, 1, "<tag>")
        svg = canvas.render()
        assert "a &lt; b &amp; c" in svg
        assert "&lt;tag&gt;" in svg
        assert "<tag>" not in svg

    def test_boxplot_is_deterministic(self):
        groups = [("before", [1.0, 2.0, 3.0, 9.0]), ("after", [1.0, 2.0, 3.0])]
        first = boxplot_svg(groups, "areas", "log10 px")
        assert first == boxplot_svg(groups, "areas", "log10 px")
        assert first.count("<rect") == 3  # background plus two boxes

    def test_boxplot_rejects_empty_group(self):
        with pytest.raises(ArgumentError):
            boxplot_svg([("before", [])], "areas", "px")
        with pytest.raises(ArgumentError):
            boxplot_svg([], "areas", "px")

    def test_histogram_bars(self):
        svg = histogram_svg({1: 4, 2: 1, 5: 2}, "clusters", "clusters per image")
        assert svg.count("<rect") == 4
        assert ">clusters per image<" in svg

    def test_empty_histogram_still_renders(self):
        assert histogram_svg({}, "empty", "x").count("<rect") == 1

    def test_closure_curve(self):
        observations = [(0.0, 40.0), (1.0, 60.0), (2.0, 70.0)]
        curve = [(t / 10, 90 - 50 * math.exp(-0.8 * t / 10)) for t in range(21)]
        svg = closure_curve_svg(observations, curve)
        assert svg.count("<circle") == 3
        assert svg.count("<polyline") == 1
        assert "<polyline" not in closure_curve_svg(observations, None)

    def test_closure_curve_needs_points(self):
        with pytest.raises(ArgumentError):
            closure_curve_svg([], None)
