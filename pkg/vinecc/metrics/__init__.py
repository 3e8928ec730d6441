"""Metrics module - counting, semantic and instance segmentation evaluation."""
