"""Shared fixtures and synthetic corpus builders."""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import hypothesis
import numpy as np
import pytest

from vinecc.annotations.masks import BinaryMask, rle_encode

hypothesis.settings.register_profile("ci", max_examples=50, deadline=None)
hypothesis.settings.load_profile("ci")

CATEGORIES = [{"id": 1, "name": "cluster"}, {"id": 2, "name": "berry"}]


def rect_mask(height: int, width: int, top: int, left: int, bottom: int, right: int) -> BinaryMask:
    """Mask with rows [top, bottom) and columns [left, right) set."""
    data = np.zeros((height, width), dtype=bool)
    data[top:bottom, left:right] = True
    return BinaryMask(data)


def rle_object(mask: BinaryMask, compressed: bool = True, **extra: Any) -> Dict[str, Any]:
    return {**rle_encode(mask).to_json(compressed=compressed), **extra}


def coco_document(
    images: Sequence[Dict[str, Any]],
    annotations: Sequence[Dict[str, Any]],
    categories: Optional[Sequence[Dict[str, Any]]] = None,
) -> Dict[str, Any]:
    return {
        "images": list(images),
        "categories": list(categories if categories is not None else CATEGORIES),
        "annotations": list(annotations),
    }


def image_entry(image_id: int, width: int = 16, height: int = 12) -> Dict[str, Any]:
    return {"id": image_id, "width": width, "height": height, "file_name": f"img_{image_id}.jpg"}


def polygon_cluster(ann_id: int, image_id: int, x0: float, y0: float, x1: float, y1: float, **extra: Any):
    return {
        "id": ann_id,
        "image_id": image_id,
        "category_id": 1,
        "segmentation": [[x0, y0, x1, y0, x1, y1, x0, y1]],
        **extra,
    }


def berry_point(ann_id: int, image_id: int, x: float, y: float, **extra: Any) -> Dict[str, Any]:
    return {"id": ann_id, "image_id": image_id, "category_id": 2, "point": [x, y], **extra}


def to_bytes(document: Any) -> bytes:
    return json.dumps(document).encode("utf-8")


def write_json(path: Path, document: Any) -> Path:
    path.write_text(json.dumps(document), encoding="utf-8")
    return path


# ── Closure corpus ────────────────────────────────────────────────────────────

CORPUS_HEIGHT = 24
CORPUS_WIDTH = 48
# Two 20x20 clusters (400 px each) side by side.
CORPUS_CLUSTERS = ((2, 2, 22, 22), (2, 26, 22, 46))


def berry_masks_covering(cluster: tuple, pixels: int, chunk: int = 40) -> List[BinaryMask]:
    """Split the first `pixels` cluster pixels (column-major) into berry masks."""
    top, left, bottom, right = cluster
    coords = [(r, c) for c in range(left, right) for r in range(top, bottom)][:pixels]
    masks = []
    for start in range(0, len(coords), chunk):
        data = np.zeros((CORPUS_HEIGHT, CORPUS_WIDTH), dtype=bool)
        for r, c in coords[start:start + chunk]:
            data[r, c] = True
        masks.append(BinaryMask(data))
    return masks


def build_closure_corpus(root: Path, covered: Dict[float, Sequence[int]]) -> Path:
    """
    Write a closure batch (masks plus manifest) under root.

    Args:
        root: Output directory
        covered: capture time (weeks) -> berry pixels for each of the two clusters

    Returns:
        Path of the manifest
    """
    entries = []
    for image_id, (time, pixels) in enumerate(sorted(covered.items()), start=1):
        clusters = [
            rle_object(rect_mask(CORPUS_HEIGHT, CORPUS_WIDTH, *c), id=cid)
            for cid, c in enumerate(CORPUS_CLUSTERS, start=1)
        ]
        berries = [
            rle_object(m)
            for c, n in zip(CORPUS_CLUSTERS, pixels)
            for m in berry_masks_covering(c, n)
        ]
        write_json(root / f"clusters_{image_id}.json", clusters)
        write_json(root / f"berries_{image_id}.json", berries)
        entries.append({
            "image_id": image_id,
            "capture_time_weeks": time,
            "clusters": f"clusters_{image_id}.json",
            "berries": f"berries_{image_id}.json",
        })
    return write_json(root / "manifest.json", {"images": entries})


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def three_date_corpus(tmp_path):
    """Three capture dates, two clusters each, closure rising over time."""
    return build_closure_corpus(tmp_path, {
        0.0: (160, 180),
        1.0: (260, 280),
        2.0: (320, 330),
    })


@pytest.fixture
def small_dataset():
    """Two images, three clusters and four berries, all consistent."""
    return coco_document(
        images=[image_entry(1), image_entry(2)],
        annotations=[
            polygon_cluster(10, 1, 0, 0, 4, 4),
            polygon_cluster(11, 1, 8, 2, 14, 8, bbox=[8, 2, 6, 6]),
            polygon_cluster(12, 2, 2, 2, 6, 6),
            berry_point(20, 1, 1.5, 1.5, cluster_id=10),
            berry_point(21, 1, 10.0, 4.0, cluster_id=11),
            berry_point(22, 1, 12.0, 6.0),
            berry_point(23, 2, 3.0, 3.0),
        ],
    )
