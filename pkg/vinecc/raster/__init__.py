"""Raster module - berry heatmap loading and keypoint decoding."""
