"""Annotations module - corpus parsing, mask codecs and dataset statistics."""
