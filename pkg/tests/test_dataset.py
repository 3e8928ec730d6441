"""Tests for annotation parsing, validation and statistics."""

import os
from pathlib import Path

import pytest

from conftest import (
    berry_point,
    coco_document,
    image_entry,
    polygon_cluster,
    rect_mask,
    rle_object,
    to_bytes,
)
from vinecc.annotations.dataset import (
    attach_points,
    clusters_from_json,
    dataset_stats,
    parse_dataset,
    parse_points_csv,
    parse_predictions,
    validate_dataset,
)
from vinecc.errors import FormatError, ValidationError


class TestParseDataset:
    def test_valid_document(self, small_dataset):
        ds = parse_dataset(to_bytes(small_dataset))
        assert ds.counts == (2, 3, 4)
        assert ds.category_id("cluster") == 1
        img = ds.image(1)
        assert [c.id for c in img.clusters] == [10, 11]
        assert img.berries[0].cluster_id == 10
        assert img.berries[2].cluster_id is None

    def test_cluster_mask_and_bbox(self, small_dataset):
        ds = parse_dataset(to_bytes(small_dataset))
        cluster = ds.image(1).clusters[1]
        assert cluster.bbox == (8, 2, 6, 6)
        assert cluster.area == 36

    def test_malformed_json_reports_offset(self):
        with pytest.raises(FormatError) as exc:
            parse_dataset(b'{"images": [}')
        assert exc.value.offset == 12

    def test_schema_violation_names_path(self, small_dataset):
        del small_dataset["images"][0]["width"]
        with pytest.raises(FormatError, match="images/0"):
            parse_dataset(to_bytes(small_dataset))

    def test_dangling_image_reference(self, small_dataset):
        small_dataset["annotations"].append(berry_point(30, 99, 1.0, 1.0))
        with pytest.raises(ValidationError) as exc:
            parse_dataset(to_bytes(small_dataset))
        assert exc.value.ids == [30]
        assert "image 99" in str(exc.value)

    def test_duplicate_annotation_ids(self, small_dataset):
        small_dataset["annotations"].append(berry_point(20, 1, 2.0, 2.0))
        with pytest.raises(ValidationError) as exc:
            parse_dataset(to_bytes(small_dataset))
        assert exc.value.ids == [20]

    def test_missing_berry_category(self, small_dataset):
        small_dataset["categories"] = [{"id": 1, "name": "cluster"}]
        small_dataset["annotations"] = [a for a in small_dataset["annotations"] if a["category_id"] == 1]
        with pytest.raises(ValidationError, match="berry"):
            parse_dataset(to_bytes(small_dataset))

    def test_berry_outside_image(self, small_dataset):
        small_dataset["annotations"].append(berry_point(31, 2, 16.0, 3.0))
        with pytest.raises(ValidationError) as exc:
            parse_dataset(to_bytes(small_dataset))
        assert exc.value.ids == [31]

    def test_berry_with_unknown_cluster(self, small_dataset):
        small_dataset["annotations"].append(berry_point(32, 2, 3.0, 3.0, cluster_id=10))
        with pytest.raises(ValidationError) as exc:
            parse_dataset(to_bytes(small_dataset))
        assert exc.value.ids == [32]

    def test_cluster_with_point_geometry(self, small_dataset):
        small_dataset["annotations"].append(
            {"id": 33, "image_id": 1, "category_id": 1, "point": [1.0, 1.0]}
        )
        with pytest.raises(ValidationError):
            parse_dataset(to_bytes(small_dataset))

    def test_rle_size_must_match_image(self):
        doc = coco_document(
            images=[image_entry(1, width=6, height=5)],
            annotations=[{
                "id": 1, "image_id": 1, "category_id": 1,
                "segmentation": rle_object(rect_mask(4, 6, 0, 0, 2, 2)),
            }],
        )
        with pytest.raises(ValidationError):
            parse_dataset(to_bytes(doc))

    def test_rle_sum_mismatch_is_format_error(self):
        doc = coco_document(
            images=[image_entry(1, width=2, height=2)],
            annotations=[{
                "id": 1, "image_id": 1, "category_id": 1,
                "segmentation": {"size": [2, 2], "counts": [1, 1]},
            }],
        )
        with pytest.raises(FormatError):
            parse_dataset(to_bytes(doc))

    def test_other_categories_ignored(self, small_dataset):
        small_dataset["categories"].append({"id": 3, "name": "leaf"})
        small_dataset["annotations"].append(polygon_cluster(40, 1, 0, 0, 2, 2) | {"category_id": 3})
        assert parse_dataset(to_bytes(small_dataset)).counts == (2, 3, 4)

    def test_eager_rasterization_rejects_empty_cluster(self, small_dataset):
        # Degenerate polygon covering no pixel center.
        small_dataset["annotations"].append(polygon_cluster(41, 2, 10, 10, 10.2, 10.2))
        assert parse_dataset(to_bytes(small_dataset), rasterize="lazy").counts[1] == 4
        with pytest.raises(ValidationError, match="empty mask"):
            parse_dataset(to_bytes(small_dataset), rasterize="eager")


class TestValidateDataset:
    def test_clean_dataset(self, small_dataset):
        report = validate_dataset(parse_dataset(to_bytes(small_dataset)))
        assert report.ok
        assert report.warnings == []

    def test_bbox_disagreement_is_a_warning(self, small_dataset):
        small_dataset["annotations"][1]["bbox"] = [0, 0, 6, 6]
        report = validate_dataset(parse_dataset(to_bytes(small_dataset)))
        assert report.ok
        assert len(report.warnings) == 1


class TestPredictions:
    def test_results_list_borrows_images(self, small_dataset):
        gt = parse_dataset(to_bytes(small_dataset))
        results = [
            {"image_id": 1, "category_id": 1, "segmentation": [[0, 0, 4, 0, 4, 4, 0, 4]], "score": 0.9},
            {"image_id": 2, "category_id": 2, "point": [3.0, 3.0]},
        ]
        pred = parse_predictions(to_bytes(results), gt)
        assert pred.counts == (2, 1, 1)
        assert pred.image(1).clusters[0].score == 0.9
        assert pred.image(1).clusters[0].id == 1


class TestPoints:
    def test_parse_points_csv(self):
        points = parse_points_csv(b"image_id,x,y\n1,2.5,3.0\n2,1,1\n1,4,4\n")
        assert [(p.x, p.y) for p in points[1]] == [(2.5, 3.0), (4.0, 4.0)]
        assert len(points[2]) == 1

    def test_bad_header(self):
        with pytest.raises(FormatError):
            parse_points_csv(b"x,y\n1,2\n")

    def test_attach_points_unknown_image(self, small_dataset):
        ds = parse_dataset(to_bytes(small_dataset))
        with pytest.raises(ValidationError):
            attach_points(ds, parse_points_csv(b"image_id,x,y\n7,1,1\n"))

    def test_attach_points_appends(self, small_dataset):
        ds = parse_dataset(to_bytes(small_dataset))
        merged = attach_points(ds, parse_points_csv(b"image_id,x,y\n2,5,5\n"))
        assert merged.counts == (2, 3, 5)
        assert ds.counts == (2, 3, 4)


class TestStats:
    def test_histograms_and_views(self, small_dataset):
        small_dataset["images"].append(image_entry(3))
        stats = dataset_stats(parse_dataset(to_bytes(small_dataset)))
        assert stats.n_images == 3
        assert stats.cluster_histogram == {0: 1, 1: 1, 2: 1}
        assert stats.berry_histogram == {0: 1, 1: 1, 3: 1}
        assert stats.cluster_mean == pytest.approx(1.0)
        assert stats.berry_max == 3
        assert stats.close_up_images == 2
        assert stats.distant_view_images == 1

    def test_empty_dataset(self):
        stats = dataset_stats(parse_dataset(to_bytes(coco_document([], []))))
        assert stats.n_images == 0
        assert stats.cluster_mean is None
        assert stats.to_dict()["clusters"]["histogram"] == {}

    def test_ten_image_corpus_matches_hand_count(self):
        cluster_counts = [0, 1, 2, 3, 1, 4, 2, 0, 5, 2]
        berry_counts = [3, 0, 7, 1, 2, 5, 4, 0, 9, 1]
        annotations = []
        next_id = 100
        for image_id, (n_clusters, n_berries) in enumerate(zip(cluster_counts, berry_counts), start=1):
            for j in range(n_clusters):
                annotations.append(polygon_cluster(next_id, image_id, 3 * j, 0, 3 * j + 2, 4))
                next_id += 1
            for j in range(n_berries):
                annotations.append(berry_point(next_id, image_id, j + 0.5, 8.5))
                next_id += 1
        document = coco_document([image_entry(i) for i in range(1, 11)], annotations)

        stats = dataset_stats(parse_dataset(to_bytes(document)))
        assert stats.n_images == 10
        assert stats.cluster_mean == pytest.approx(20 / 10)
        assert stats.berry_mean == pytest.approx(32 / 10)
        assert stats.cluster_median == pytest.approx(2.0)
        assert stats.berry_median == pytest.approx(2.5)
        assert stats.cluster_histogram == {0: 2, 1: 2, 2: 3, 3: 1, 4: 1, 5: 1}
        assert stats.berry_max == 9
        assert (stats.close_up_images, stats.distant_view_images) == (4, 6)


def test_clusters_from_json_default_ids():
    objects = [rle_object(rect_mask(4, 4, 0, 0, 2, 2)), rle_object(rect_mask(4, 4, 2, 2, 4, 4), id=7)]
    clusters = clusters_from_json(objects)
    assert [c.id for c in clusters] == [1, 7]
    assert clusters[0].area == 4


@pytest.mark.parametrize(
    "objects",
    [
        {"size": [4, 4], "counts": [16]},
        [{"size": [4, 4], "counts": [16], "id": 1.5}],
        [{"size": [4, 4], "counts": [7.5, 8.5]}],
    ],
)
def test_clusters_from_json_rejects_malformed(objects):
    with pytest.raises(FormatError, match="Invalid cluster mask set"):
        clusters_from_json(objects)


@pytest.mark.skipif("VINECC_CORPUS" not in os.environ, reason="set VINECC_CORPUS to a full annotation export")
def test_full_corpus_averages():
    ds = parse_dataset(Path(os.environ["VINECC_CORPUS"]).read_bytes())
    stats = dataset_stats(ds)
    assert stats.cluster_mean == pytest.approx(3.8, abs=0.05)
    assert stats.berry_mean == pytest.approx(129.7, abs=0.05)
