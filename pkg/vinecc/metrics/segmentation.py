"""
Semantic segmentation IoU.

Classes that appear in neither prediction nor ground truth have an
undefined IoU and are left out of the mean.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from vinecc.annotations.masks import BinaryMask
from vinecc.errors import ArgumentError

logger = logging.getLogger(__name__)


def confusion_matrix(pred: ArrayLike, gt: ArrayLike, n_classes: int) -> NDArray[np.int64]:
    """
    Pixel confusion matrix, rows indexed by ground truth.

    Raises:
        ArgumentError: On a shape mismatch or a label outside [0, n_classes)
    """
    if n_classes < 1:
        raise ArgumentError(f"n_classes must be >= 1, got {n_classes}")
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ArgumentError(f"Label masks differ in shape: {pred.shape} vs {gt.shape}")
    for name, labels in (("prediction", pred), ("ground truth", gt)):
        if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
            raise ArgumentError(f"{name} labels must lie in [0, {n_classes})")
    flat = gt.astype(np.int64).ravel() * n_classes + pred.astype(np.int64).ravel()
    return np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def class_iou(cm: NDArray[np.int64]) -> List[Optional[float]]:
    """Per-class IoU from a confusion matrix; None for absent classes."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    return [float(tp[i] / denom[i]) if denom[i] > 0 else None for i in range(cm.shape[0])]


def miou_from_confusion(cm: NDArray[np.int64]) -> float:
    present = [v for v in class_iou(cm) if v is not None]
    if not present:
        raise ArgumentError("No class is present in either labeling")
    return float(np.mean(present))


def miou(pred: ArrayLike, gt: ArrayLike, n_classes: int) -> float:
    """
    Mean intersection over union across classes.

    Args:
        pred: Predicted label mask
        gt: Ground-truth label mask of the same shape
        n_classes: Number of classes; labels lie in [0, n_classes)

    Returns:
        Mean IoU over classes present in pred or gt
    """
    return miou_from_confusion(confusion_matrix(pred, gt, n_classes))


def label_mask(masks: Sequence[BinaryMask], shape) -> NDArray[np.int64]:
    """Two-class labeling: 1 where any mask is set, 0 elsewhere."""
    labels = np.zeros(shape, dtype=np.int64)
    for m in masks:
        if m.shape != tuple(shape):
            raise ArgumentError(f"Mask is {m.shape}, expected {tuple(shape)}")
        labels[m.data] = 1
    return labels
