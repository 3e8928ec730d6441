"""
Annotation corpus parsing, validation and summary statistics.

Handles COCO-flavored JSON documents with a "cluster" category carrying
instance masks (polygons or RLE) and a "berry" category carrying single
points. Parsed indexes are immutable and safe to share between threads.
"""

import csv
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from vinecc import constants
from vinecc.annotations.masks import (
    BBox,
    BinaryMask,
    Rle,
    mask_to_bbox,
    polygons_to_mask,
    rle_decode,
)
from vinecc.annotations.schema import (
    check_cluster_set_document,
    check_dataset_document,
    check_results_document,
)
from vinecc.errors import EmptyMaskError, FormatError, ValidationError

logger = logging.getLogger(__name__)

Polygons = Tuple[Tuple[float, ...], ...]
Segmentation = Union[BinaryMask, Rle, Polygons]


@dataclass(frozen=True)
class BerryPoint:
    """A labeled berry centroid in pixel coordinates."""
    x: float
    y: float
    cluster_id: Optional[int] = None
    id: Optional[int] = None


@dataclass(frozen=True)
class ClusterAnnotation:
    """
    A grape cluster instance.

    The dense mask is rasterized on first access and cached; the bounding
    box is always derived from the mask.

    Attributes:
        id: Annotation id
        segmentation: Polygon parts, Rle or BinaryMask
        width: Owning image width
        height: Owning image height
        score: Prediction confidence (None for ground truth)
        declared_bbox: Bounding box given in the source document, if any
    """
    id: int
    segmentation: Segmentation = field(repr=False)
    width: int
    height: int
    score: Optional[float] = None
    declared_bbox: Optional[Tuple[float, float, float, float]] = None

    @cached_property
    def mask(self) -> BinaryMask:
        seg = self.segmentation
        if isinstance(seg, BinaryMask):
            return seg
        if isinstance(seg, Rle):
            return rle_decode(seg)
        return polygons_to_mask(seg, self.width, self.height)

    @property
    def bbox(self) -> BBox:
        return mask_to_bbox(self.mask)

    @property
    def area(self) -> int:
        return self.mask.area


@dataclass(frozen=True)
class ImageRecord:
    """One image with its cluster and berry annotations."""
    id: int
    width: int
    height: int
    file_name: str
    clusters: Tuple[ClusterAnnotation, ...] = ()
    berries: Tuple[BerryPoint, ...] = ()


@dataclass(frozen=True)
class DatasetIndex:
    """
    A parsed and validated annotation corpus.

    Attributes:
        images: Image records in document order
        categories: Category id -> name
    """
    images: Tuple[ImageRecord, ...]
    categories: Mapping[int, str]

    @cached_property
    def _by_id(self) -> Mapping[int, ImageRecord]:
        return MappingProxyType({img.id: img for img in self.images})

    def image(self, image_id: int) -> ImageRecord:
        """Look up an image by id (KeyError if absent)."""
        return self._by_id[image_id]

    def has_image(self, image_id: int) -> bool:
        return image_id in self._by_id

    def category_id(self, name: str) -> Optional[int]:
        """Return the id of the category with this name, if present."""
        for cid, cname in sorted(self.categories.items()):
            if cname == name:
                return cid
        return None

    @property
    def counts(self) -> Tuple[int, int, int]:
        """(images, clusters, berries) totals."""
        return (
            len(self.images),
            sum(len(img.clusters) for img in self.images),
            sum(len(img.berries) for img in self.images),
        )


@dataclass(frozen=True)
class DatasetStats:
    """Per-image instance count distributions."""
    n_images: int
    cluster_histogram: Dict[int, int]
    berry_histogram: Dict[int, int]
    cluster_mean: Optional[float]
    cluster_median: Optional[float]
    berry_mean: Optional[float]
    berry_median: Optional[float]
    cluster_max: Optional[int]
    berry_max: Optional[int]
    close_up_images: int
    distant_view_images: int

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n_images": self.n_images,
            "clusters": {
                "histogram": {str(k): v for k, v in self.cluster_histogram.items()},
                "mean": self.cluster_mean,
                "median": self.cluster_median,
                "max": self.cluster_max,
            },
            "berries": {
                "histogram": {str(k): v for k, v in self.berry_histogram.items()},
                "mean": self.berry_mean,
                "median": self.berry_median,
                "max": self.berry_max,
            },
            "views": {
                "close_up": self.close_up_images,
                "distant_view": self.distant_view_images,
            },
        }


@dataclass
class DatasetReport:
    """Outcome of a full (rasterizing) validation pass."""
    violations: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


# ── Parsing ───────────────────────────────────────────────────────────────────

def _load_json(json_bytes: bytes) -> Any:
    """Decode UTF-8 JSON, reporting failures with a byte offset."""
    try:
        text = json_bytes.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise FormatError(f"Annotation file is not valid UTF-8: {e.reason}", offset=e.start)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        offset = len(text[:e.pos].encode("utf-8"))
        raise FormatError(f"Malformed JSON: {e.msg}", offset=offset)


def _duplicates(values: Iterable[Any]) -> List[Any]:
    return [v for v, n in Counter(values).items() if n > 1]


def _segmentation_from_json(seg: Any, ann_id: int, width: int, height: int) -> Segmentation:
    if isinstance(seg, dict):
        rle = Rle.from_json(seg)
        if rle.size != (height, width):
            raise ValidationError(
                f"Annotation {ann_id} RLE size {list(rle.size)} differs from image "
                f"size [{height}, {width}]",
                ids=[ann_id],
            )
        if sum(rle.counts) != height * width:
            raise FormatError(
                f"Annotation {ann_id} RLE counts sum to {sum(rle.counts)}, "
                f"expected {height * width}"
            )
        return rle
    return tuple(tuple(float(v) for v in part) for part in seg)


def _build_index(
    images_raw: Sequence[Dict[str, Any]],
    categories_raw: Sequence[Dict[str, Any]],
    annotations_raw: Sequence[Dict[str, Any]],
    rasterize: str,
) -> DatasetIndex:
    dup_images = _duplicates(img["id"] for img in images_raw)
    if dup_images:
        raise ValidationError("Duplicate image ids", ids=dup_images)
    dup_categories = _duplicates(cat["id"] for cat in categories_raw)
    if dup_categories:
        raise ValidationError("Duplicate category ids", ids=dup_categories)
    dup_annotations = _duplicates(ann["id"] for ann in annotations_raw)
    if dup_annotations:
        raise ValidationError("Duplicate annotation ids", ids=dup_annotations)

    categories = {int(cat["id"]): str(cat["name"]) for cat in categories_raw}
    names = set(categories.values())
    for required in (constants.CLUSTER_CATEGORY, constants.BERRY_CATEGORY):
        if required not in names:
            raise ValidationError(f"Missing required category '{required}'")

    images = {int(img["id"]): img for img in images_raw}

    dangling = []
    for ann in annotations_raw:
        if ann["image_id"] not in images:
            dangling.append((ann["id"], f"image {ann['image_id']}"))
        elif ann["category_id"] not in categories:
            dangling.append((ann["id"], f"category {ann['category_id']}"))
    if dangling:
        detail = "; ".join(f"annotation {aid} references {ref}" for aid, ref in dangling)
        raise ValidationError(f"Dangling references ({detail})", ids=[aid for aid, _ in dangling])

    clusters: Dict[int, List[ClusterAnnotation]] = {iid: [] for iid in images}
    berries: Dict[int, List[BerryPoint]] = {iid: [] for iid in images}
    wrong_geometry = []
    out_of_bounds = []
    skipped = 0

    for ann in annotations_raw:
        img = images[ann["image_id"]]
        width, height = int(img["width"]), int(img["height"])
        name = categories[ann["category_id"]]

        if name == constants.CLUSTER_CATEGORY:
            if "segmentation" not in ann:
                wrong_geometry.append(ann["id"])
                continue
            bbox = ann.get("bbox")
            clusters[img["id"]].append(ClusterAnnotation(
                id=int(ann["id"]),
                segmentation=_segmentation_from_json(ann["segmentation"], ann["id"], width, height),
                width=width,
                height=height,
                score=ann.get("score"),
                declared_bbox=tuple(float(v) for v in bbox) if bbox is not None else None,
            ))
        elif name == constants.BERRY_CATEGORY:
            if "point" not in ann:
                wrong_geometry.append(ann["id"])
                continue
            x, y = (float(v) for v in ann["point"])
            if not (0 <= x < width and 0 <= y < height):
                out_of_bounds.append(ann["id"])
                continue
            cluster_id = ann.get("cluster_id")
            berries[img["id"]].append(BerryPoint(
                x=x,
                y=y,
                cluster_id=int(cluster_id) if cluster_id is not None else None,
                id=int(ann["id"]),
            ))
        else:
            skipped += 1

    if wrong_geometry:
        raise ValidationError(
            "Cluster annotations need a segmentation and berry annotations a point",
            ids=wrong_geometry,
        )
    if out_of_bounds:
        raise ValidationError("Berry points outside their image", ids=out_of_bounds)
    if skipped:
        logger.debug(f"Ignored {skipped} annotation(s) of other categories")

    unknown_cluster = []
    for iid, points in berries.items():
        cluster_ids = {c.id for c in clusters[iid]}
        unknown_cluster.extend(
            p.id for p in points if p.cluster_id is not None and p.cluster_id not in cluster_ids
        )
    if unknown_cluster:
        raise ValidationError("Berry points reference unknown clusters", ids=unknown_cluster)

    records = tuple(
        ImageRecord(
            id=int(img["id"]),
            width=int(img["width"]),
            height=int(img["height"]),
            file_name=str(img["file_name"]),
            clusters=tuple(clusters[iid]),
            berries=tuple(berries[iid]),
        )
        for iid, img in images.items()
    )
    index = DatasetIndex(images=records, categories=MappingProxyType(categories))

    if rasterize == "eager":
        report = validate_dataset(index)
        if not report.ok:
            raise ValidationError("; ".join(report.violations))

    n_images, n_clusters, n_berries = index.counts
    logger.info(f"Parsed {n_images} images, {n_clusters} clusters, {n_berries} berry points")
    return index


def parse_dataset(json_bytes: bytes, rasterize: str = "lazy") -> DatasetIndex:
    """
    Parse and validate an annotation document.

    Args:
        json_bytes: UTF-8 JSON document
        rasterize: "eager" rasterizes every cluster mask and checks it is
            nonempty; "lazy" defers that to first use or validate_dataset

    Returns:
        Immutable DatasetIndex

    Raises:
        FormatError: On malformed JSON or schema violations
        ValidationError: On dangling or inconsistent references
    """
    document = _load_json(json_bytes)
    check_dataset_document(document)
    return _build_index(
        document["images"], document["categories"], document["annotations"], rasterize
    )


def parse_predictions(json_bytes: bytes, reference: DatasetIndex) -> DatasetIndex:
    """
    Parse predictions as a full annotation document or a flat results list.

    A results list borrows images and categories from the reference
    (ground-truth) index; annotations without ids are numbered in order.

    Args:
        json_bytes: UTF-8 JSON document
        reference: Ground-truth index supplying image sizes

    Returns:
        DatasetIndex of predictions
    """
    document = _load_json(json_bytes)
    if isinstance(document, dict):
        check_dataset_document(document)
        return _build_index(
            document["images"], document["categories"], document["annotations"], "lazy"
        )

    check_results_document(document)
    images_raw = [
        {"id": img.id, "width": img.width, "height": img.height, "file_name": img.file_name}
        for img in reference.images
    ]
    categories_raw = [{"id": cid, "name": name} for cid, name in reference.categories.items()]
    annotations_raw = [
        {"id": i + 1, **ann} if "id" not in ann else ann
        for i, ann in enumerate(document)
    ]
    return _build_index(images_raw, categories_raw, annotations_raw, "lazy")


def validate_dataset(ds: DatasetIndex) -> DatasetReport:
    """
    Run the rasterizing checks that lazy parsing defers.

    Violations: empty cluster masks, masks whose size differs from the image.
    Warnings: declared bounding boxes more than one pixel off the derived box.

    Args:
        ds: Parsed dataset

    Returns:
        DatasetReport
    """
    report = DatasetReport()
    for img in ds.images:
        for cluster in img.clusters:
            mask = cluster.mask
            if mask.shape != (img.height, img.width):
                report.violations.append(
                    f"cluster {cluster.id} mask is {mask.width}x{mask.height}, "
                    f"image {img.id} is {img.width}x{img.height}"
                )
                continue
            try:
                derived = mask_to_bbox(mask)
            except EmptyMaskError:
                report.violations.append(f"cluster {cluster.id} in image {img.id} has an empty mask")
                continue
            declared = cluster.declared_bbox
            if declared is not None and max(abs(a - b) for a, b in zip(declared, derived)) > 1.0:
                report.warnings.append(
                    f"cluster {cluster.id} declares bbox {list(declared)}, derived {list(derived)}"
                )
    return report


# ── Point CSV import ──────────────────────────────────────────────────────────

def parse_points_csv(data: bytes) -> Dict[int, List[BerryPoint]]:
    """
    Parse a flat berry point CSV with header image_id,x,y.

    Args:
        data: UTF-8 CSV bytes

    Returns:
        Mapping image id -> points in file order

    Raises:
        FormatError: On a wrong header or an unparsable row
    """
    try:
        text = data.decode("utf-8-sig")
    except UnicodeDecodeError as e:
        raise FormatError(f"Point CSV is not valid UTF-8: {e.reason}", offset=e.start)

    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != constants.POINTS_CSV_HEADER:
        raise FormatError(f"Point CSV header must be {','.join(constants.POINTS_CSV_HEADER)}")

    points: Dict[int, List[BerryPoint]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"Point CSV line {line_no}: expected 3 fields, got {len(row)}")
        try:
            image_id, x, y = int(row[0]), float(row[1]), float(row[2])
        except ValueError as e:
            raise FormatError(f"Point CSV line {line_no}: {e}")
        points.setdefault(image_id, []).append(BerryPoint(x=x, y=y))
    return points


def attach_points(ds: DatasetIndex, points: Mapping[int, Sequence[BerryPoint]]) -> DatasetIndex:
    """
    Return a new index with extra berry points appended to their images.

    Raises:
        ValidationError: If a point references a missing image or lies outside it
    """
    missing = [iid for iid in points if not ds.has_image(iid)]
    if missing:
        raise ValidationError("Point CSV references unknown images", ids=missing)

    records = []
    for img in ds.images:
        extra = tuple(points.get(img.id, ()))
        outside = [
            f"{p.x},{p.y}" for p in extra if not (0 <= p.x < img.width and 0 <= p.y < img.height)
        ]
        if outside:
            raise ValidationError(f"Points outside image {img.id}", ids=outside)
        records.append(ImageRecord(
            id=img.id,
            width=img.width,
            height=img.height,
            file_name=img.file_name,
            clusters=img.clusters,
            berries=img.berries + extra,
        ))
    return DatasetIndex(images=tuple(records), categories=ds.categories)


# ── Statistics ────────────────────────────────────────────────────────────────

def _summary(values: List[int]) -> Tuple[Dict[int, int], Optional[float], Optional[float], Optional[int]]:
    if not values:
        return {}, None, None, None
    histogram = dict(sorted(Counter(values).items()))
    arr = np.asarray(values, dtype=np.float64)
    return histogram, float(arr.mean()), float(np.median(arr)), int(arr.max())


def dataset_stats(ds: DatasetIndex) -> DatasetStats:
    """
    Summarize per-image cluster and berry counts.

    Images without annotations land in bin 0. Images with at most one
    cluster count as close-up views, the rest as distant views.

    Args:
        ds: Parsed dataset

    Returns:
        DatasetStats (means/medians are None for an empty dataset)
    """
    cluster_counts = [len(img.clusters) for img in ds.images]
    berry_counts = [len(img.berries) for img in ds.images]
    c_hist, c_mean, c_median, c_max = _summary(cluster_counts)
    b_hist, b_mean, b_median, b_max = _summary(berry_counts)
    close_up = sum(1 for n in cluster_counts if n <= 1)
    return DatasetStats(
        n_images=len(ds.images),
        cluster_histogram=c_hist,
        berry_histogram=b_hist,
        cluster_mean=c_mean,
        cluster_median=c_median,
        berry_mean=b_mean,
        berry_median=b_median,
        cluster_max=c_max,
        berry_max=b_max,
        close_up_images=close_up,
        distant_view_images=len(ds.images) - close_up,
    )


def clusters_from_json(objects: Sequence[Dict[str, Any]]) -> List[ClusterAnnotation]:
    """
    Build cluster annotations from a list of RLE objects.

    Each object may carry an "id"; otherwise ids are 1-based positions.

    Args:
        objects: COCO RLE objects, optionally with "id"

    Returns:
        Cluster annotations in input order

    Raises:
        FormatError: If an object is not a valid RLE or id
        ValidationError: On duplicate cluster ids
    """
    check_cluster_set_document(objects)
    clusters = []
    for i, obj in enumerate(objects):
        rle = Rle.from_json(obj)
        clusters.append(ClusterAnnotation(
            id=int(obj.get("id", i + 1)),
            segmentation=rle,
            width=rle.width,
            height=rle.height,
        ))
    dup = _duplicates(c.id for c in clusters)
    if dup:
        raise ValidationError("Duplicate cluster ids", ids=dup)
    return clusters
