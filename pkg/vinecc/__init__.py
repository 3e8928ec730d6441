"""
vinecc - Vine cluster closure toolkit

Post-inference tooling for grape cluster closure analysis: annotation
corpora, berry heatmap decoding, mask filtering, visual cluster closure,
closure-curve regression and segmentation/counting metrics.
"""

__version__ = "0.1.0"
__app_name__ = "vinecc"
