"""End-to-end tests of the command line through run_application."""

import json

import pytest

from conftest import berry_point, coco_document, image_entry, polygon_cluster, rect_mask, rle_object, write_json
from vinecc.app import run_application
from vinecc.closure import ClosureRecord, records_from_csv, records_to_csv
from vinecc.regression import AsymptoticModel, eval_model


def run(*args):
    return run_application(["vinecc", *args])


@pytest.fixture
def dataset_path(tmp_path, small_dataset):
    return write_json(tmp_path / "dataset.json", small_dataset)


class TestValidate:
    def test_valid_dataset(self, dataset_path, capsys):
        assert run("validate", str(dataset_path)) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["ok"] is True
        assert report["counts"] == {"images": 2, "clusters": 3, "berries": 4}

    def test_dangling_reference(self, tmp_path, small_dataset, capsys):
        small_dataset["annotations"].append(berry_point(99, 7, 1.0, 1.0))
        path = write_json(tmp_path / "dangling.json", small_dataset)
        assert run("validate", str(path)) == 3
        report = json.loads(capsys.readouterr().out)
        assert report["ok"] is False
        assert report["ids"] == [99]

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{"images": [')
        assert run("validate", str(path)) == 2

    def test_missing_file(self, tmp_path):
        assert run("validate", str(tmp_path / "absent.json")) == 2

    def test_strict_fails_on_bbox_warning(self, tmp_path, capsys):
        document = coco_document(
            images=[image_entry(1)],
            annotations=[polygon_cluster(10, 1, 0, 0, 4, 4, bbox=[6, 6, 4, 4])],
        )
        path = write_json(tmp_path / "warn.json", document)
        assert run("validate", str(path)) == 0
        capsys.readouterr()
        assert run("validate", "--strict", str(path)) == 3
        assert json.loads(capsys.readouterr().out)["warnings"]

    def test_mutated_documents_fail(self, tmp_path, small_dataset, rng):
        path = tmp_path / "mutated.json"
        for _ in range(100):
            document = json.loads(json.dumps(small_dataset))
            annotation = document["annotations"][int(rng.integers(len(document["annotations"])))]
            kind = int(rng.integers(5))
            if kind == 0:
                text = json.dumps(document)
                path.write_text(text[:int(rng.integers(1, len(text) - 1))])
            else:
                if kind == 1:
                    del annotation[str(rng.choice(["id", "image_id", "category_id"]))]
                elif kind == 2:
                    annotation["image_id"] = 999
                elif kind == 3:
                    document["annotations"].append(dict(annotation))
                else:
                    del document["images"][0][str(rng.choice(["id", "width", "height", "file_name"]))]
                write_json(path, document)
            assert run("validate", str(path)) in (2, 3)


def test_stats_with_plot(dataset_path, tmp_path, capsys):
    plot = tmp_path / "plots" / "clusters.svg"
    assert run("stats", str(dataset_path), "--plot", str(plot)) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["totals"]["clusters"] == 3
    assert report["clusters"]["histogram"] == {"1": 1, "2": 1}
    assert plot.read_text().startswith("<?xml")


def test_extract_points_from_text_heatmap(tmp_path, capsys):
    heatmap = tmp_path / "heat.txt"
    heatmap.write_text("HF 3 3\n0 0 0\n0 0.9 0\n0 0 0\n")
    prompts = tmp_path / "prompts.json"
    assert run("extract-points", str(heatmap), "--factor", "1", "--prompts", str(prompts)) == 0
    assert capsys.readouterr().out == "x,y,score\n1.0,1.0,0.9\n"
    assert json.loads(prompts.read_text())[0]["point_coords"] == [[1.0, 1.0]]


def test_extract_points_rejects_even_window(tmp_path):
    heatmap = tmp_path / "heat.txt"
    heatmap.write_text("HF 1 1\n0.5\n")
    assert run("extract-points", str(heatmap), "--window", "4") == 2


class TestVcc:
    def test_parallel_output_is_identical(self, three_date_corpus, tmp_path):
        serial, parallel = tmp_path / "serial.csv", tmp_path / "parallel.csv"
        assert run("vcc", "--manifest", str(three_date_corpus), "-o", str(serial)) == 0
        assert run("vcc", "--manifest", str(three_date_corpus), "--jobs", "2", "-o", str(parallel)) == 0
        assert serial.read_bytes() == parallel.read_bytes()

        records = records_from_csv(serial.read_text())
        assert [(r.image_id, r.cluster_id) for r in records] == [(1, 1), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2)]
        assert [r.vcc for r in records] == pytest.approx([40.0, 45.0, 65.0, 70.0, 80.0, 82.5])

    def test_needs_inputs(self):
        assert run("vcc") == 2


class TestFitClosure:
    def write_records(self, tmp_path, values):
        records = [
            ClosureRecord(i, 1, 0, 1000, float(v), float(t))
            for i, (t, v) in enumerate(values, start=1)
        ]
        path = tmp_path / "closure.csv"
        path.write_text(records_to_csv(records))
        return path

    def test_recovers_curve(self, tmp_path, capsys):
        model = AsymptoticModel(asym=90.0, r0=40.0, rate=0.8)
        times = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0]
        path = self.write_records(tmp_path, [(t, eval_model(model, t)) for t in times])
        plot = tmp_path / "curve.svg"
        assert run("fit-closure", str(path), "--compare", "--plot", str(plot)) == 0

        report = json.loads(capsys.readouterr().out)
        assert report["converged"] is True
        assert report["asym"] == pytest.approx(90.0, abs=1e-6)
        assert report["intercept"] == pytest.approx(40.0, abs=1e-6)
        assert report["rate"] == pytest.approx(0.8, abs=1e-6)
        assert len(report["series"]) == 7
        assert set(report["reference"]) == {"2020", "2024"}
        assert "<polyline" in plot.read_text()

    def test_flat_data(self, tmp_path, capsys):
        path = self.write_records(tmp_path, [(0, 50), (1, 50), (2, 50), (3, 50)])
        assert run("fit-closure", str(path)) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["status"] == "unidentifiable"
        assert report["rate"] is None
        assert run("fit-closure", "--strict", str(path)) == 4


def test_evaluate_self_is_perfect(tmp_path, small_dataset, dataset_path, capsys):
    for ann in small_dataset["annotations"]:
        if ann["category_id"] == 1:
            ann["score"] = 0.9
    predictions = write_json(tmp_path / "pred.json", small_dataset)
    assert run("evaluate", str(dataset_path), str(predictions)) == 0

    report = json.loads(capsys.readouterr().out)
    assert report["ap"]["map"] == pytest.approx(100.0)
    assert report["ap"]["ap_large"] is None
    assert report["miou"] == pytest.approx(100.0)
    assert report["counting"] == {"mae": 0.0, "rmse": 0.0, "n_images": 2}


def test_boxplot_of_empty_mask_set(tmp_path):
    before = tmp_path / "before.json"
    before.write_text("[]")
    assert run("plot-filter-boxplot", str(before)) == 2


def test_log_file(dataset_path, tmp_path):
    log = tmp_path / "logs" / "run.log"
    assert run("stats", str(dataset_path), "--log-file", str(log), "-o", str(tmp_path / "s.json")) == 0
    assert "[INFO]" in log.read_text()


def test_config_file_applies(tmp_path, capsys):
    heatmap = tmp_path / "heat.txt"
    heatmap.write_text("HF 3 1\n0.3 0 0.6\n")
    config = tmp_path / "run.yaml"
    config.write_text("raster:\n  tau: 0.4\n  upsample_factor: 1\n")
    assert run("extract-points", str(heatmap), "--config", str(config)) == 0
    assert capsys.readouterr().out == "x,y,score\n2.0,0.0,0.6\n"


def test_closure_pipeline_is_reproducible(three_date_corpus, tmp_path):
    outputs = []
    for run_dir in ("a", "b"):
        csv_path = tmp_path / run_dir / "closure.csv"
        fit_path = tmp_path / run_dir / "fit.json"
        assert run("vcc", "--manifest", str(three_date_corpus), "-o", str(csv_path)) == 0
        assert run("fit-closure", str(csv_path), "-o", str(fit_path)) == 0
        outputs.append((csv_path.read_bytes(), fit_path.read_bytes()))
    assert outputs[0] == outputs[1]


class TestBadSettings:
    def test_unknown_percentile_method(self, tmp_path):
        masks = write_json(
            tmp_path / "masks.json",
            [rle_object(rect_mask(8, 8, 0, 0, 2, n)) for n in (2, 3, 4, 8)],
        )
        assert run("plot-filter-boxplot", str(masks), "-o", str(tmp_path / "box.svg")) == 0
        assert run("plot-filter-boxplot", str(masks), "--percentile-method", "bogus") == 2

    def test_wrongly_typed_config_value(self, dataset_path, tmp_path):
        config = write_json(tmp_path / "run.json", {"raster": {"tau": "abc"}})
        assert run("stats", str(dataset_path), "--config", str(config)) == 2


def test_fractional_rle_counts_rejected(tmp_path):
    masks = write_json(tmp_path / "masks.json", [{"size": [2, 2], "counts": [1.9, 2.1]}])
    assert run("plot-filter-boxplot", str(masks)) == 2
