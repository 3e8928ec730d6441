"""Berry counting errors."""

import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence

import numpy as np

from vinecc.errors import ArgumentError


@dataclass(frozen=True)
class CountPair:
    """Ground-truth and predicted berry count for one image."""
    y: int
    y_hat: float

    def __post_init__(self):
        if not (math.isfinite(self.y) and math.isfinite(self.y_hat)):
            raise ArgumentError(f"Counts must be finite, got ({self.y}, {self.y_hat})")
        if self.y < 0 or self.y_hat < 0:
            raise ArgumentError(f"Counts must be >= 0, got ({self.y}, {self.y_hat})")


def _differences(pairs: Iterable[CountPair]) -> np.ndarray:
    pairs = list(pairs)
    if not pairs:
        raise ArgumentError("Counting metrics need at least one pair")
    return np.array([p.y - p.y_hat for p in pairs], dtype=np.float64)


def mae(pairs: Iterable[CountPair]) -> float:
    """Mean absolute counting error."""
    return float(np.mean(np.abs(_differences(pairs))))


def rmse(pairs: Iterable[CountPair]) -> float:
    """Root mean squared counting error."""
    return float(np.sqrt(np.mean(np.square(_differences(pairs)))))


def count_pairs(
    truth: Mapping[int, int],
    predicted: Mapping[int, float],
    image_ids: Sequence[int],
) -> List[CountPair]:
    """Pair per-image counts; images missing from a side count as 0."""
    return [CountPair(y=int(truth.get(i, 0)), y_hat=float(predicted.get(i, 0))) for i in image_ids]


def counting_report(pairs: Sequence[CountPair]) -> Dict[str, float]:
    return {"mae": mae(pairs), "rmse": rmse(pairs), "n_images": len(pairs)}
