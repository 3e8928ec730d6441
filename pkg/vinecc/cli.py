"""
Command-line interface.

Every subcommand reads its inputs, runs one pipeline stage and writes a
deterministic JSON, CSV or SVG result to --output (or stdout). Handlers
take the parsed arguments and the effective RunConfig and return an exit
code; errors propagate as VineccError.
"""

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from vinecc import constants
from vinecc.annotations.dataset import (
    DatasetIndex,
    attach_points,
    clusters_from_json,
    dataset_stats,
    parse_dataset,
    parse_points_csv,
    parse_predictions,
    validate_dataset,
)
from vinecc.annotations.schema import check_manifest_document
from vinecc.closure import ClosureRecord, build_series, image_closure, records_from_csv, records_to_csv
from vinecc.config import RunConfig
from vinecc.errors import ArgumentError, FitError, ValidationError
from vinecc.fileio import atomic_write, dumps_json, emit, read_bytes, read_json, read_text
from vinecc.maskops import filter_masks_iqr, load_maskset, maskset_from_json
from vinecc.metrics.counting import count_pairs, counting_report
from vinecc.metrics.detection import average_precision, detections_from_index, ground_truths_from_index
from vinecc.metrics.segmentation import confusion_matrix, label_mask, miou_from_confusion
from vinecc.plots import boxplot_svg, closure_curve_svg, histogram_svg, log10_areas
from vinecc.raster.heatmap import load_heatmap, save_heatmap_npy
from vinecc.raster.keypoints import extract_keypoints, keypoints_to_csv, prompts_to_json, upsample_bilinear
from vinecc.regression import (
    AsymptoticModel,
    eval_model,
    fit_asymptotic,
    fraction_at_time,
    series_points,
    time_to_fraction,
)

logger = logging.getLogger(__name__)

CURVE_SAMPLES = 100


def _finite_or_none(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _write_output(args: argparse.Namespace, content: str) -> None:
    emit(content, args.output, sys.stdout)


# ── validate ──────────────────────────────────────────────────────────────────

def cmd_validate(args: argparse.Namespace, config: RunConfig) -> int:
    """Parse and check a dataset; exit 3 when any invariant fails."""
    report: Dict[str, Any]
    try:
        ds = parse_dataset(read_bytes(args.dataset), rasterize=config.rasterize)
        if args.points:
            ds = attach_points(ds, parse_points_csv(read_bytes(args.points)))
    except ValidationError as e:
        report = {"ok": False, "violations": [str(e)], "ids": e.ids, "warnings": []}
        _write_output(args, dumps_json(report))
        logger.error(str(e))
        return constants.EXIT_VALIDATION

    result = validate_dataset(ds)
    images, clusters, berries = ds.counts
    ok = result.ok and not (args.strict and result.warnings)
    report = {
        "ok": ok,
        "counts": {"images": images, "clusters": clusters, "berries": berries},
        "violations": result.violations,
        "warnings": result.warnings,
    }
    _write_output(args, dumps_json(report))

    for w in result.warnings:
        logger.warning(w)
    if not ok:
        logger.error(f"{len(result.violations)} violation(s), {len(result.warnings)} warning(s)")
        return constants.EXIT_VALIDATION
    logger.info(f"Dataset OK: {images} images, {clusters} clusters, {berries} berries")
    return constants.EXIT_OK


# ── stats ─────────────────────────────────────────────────────────────────────

def cmd_stats(args: argparse.Namespace, config: RunConfig) -> int:
    """Per-image instance count distributions, with optional histogram SVGs."""
    ds = parse_dataset(read_bytes(args.dataset), rasterize=config.rasterize)
    if args.points:
        ds = attach_points(ds, parse_points_csv(read_bytes(args.points)))

    stats = dataset_stats(ds)
    report = stats.to_dict()
    images, clusters, berries = ds.counts
    report["totals"] = {"images": images, "clusters": clusters, "berries": berries}
    _write_output(args, dumps_json(report))

    if args.plot:
        atomic_write(args.plot, histogram_svg(stats.cluster_histogram, "Clusters per image", "clusters"))
    if args.berry_plot:
        atomic_write(args.berry_plot, histogram_svg(stats.berry_histogram, "Berries per image", "berries"))
    return constants.EXIT_OK


# ── extract-points ────────────────────────────────────────────────────────────

def cmd_extract_points(args: argparse.Namespace, config: RunConfig) -> int:
    """Decode berry keypoints from a heatmap file."""
    heatmap = load_heatmap(read_bytes(args.heatmap), stride_factor=config.upsample_factor)
    upsampled = upsample_bilinear(heatmap, config.upsample_factor)
    points = extract_keypoints(upsampled, tau=config.tau, k=config.top_k, window=config.window)
    logger.info(
        f"{len(points)} keypoint(s) from {heatmap.width}x{heatmap.height} heatmap "
        f"(x{config.upsample_factor}, tau={config.tau})"
    )

    _write_output(args, keypoints_to_csv(points))
    if args.prompts:
        atomic_write(args.prompts, prompts_to_json(points))
    if args.upsampled:
        atomic_write(args.upsampled, save_heatmap_npy(upsampled))
    return constants.EXIT_OK


# ── vcc ───────────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ClosureJob:
    """One image of a closure batch."""
    image_id: int
    capture_time: float
    clusters: Path
    berries: Path


def _load_jobs(args: argparse.Namespace) -> List[ClosureJob]:
    if args.manifest:
        manifest = read_json(args.manifest)
        check_manifest_document(manifest)
        base = Path(args.manifest).parent
        return [
            ClosureJob(
                image_id=entry["image_id"],
                capture_time=float(entry["capture_time_weeks"]),
                clusters=base / entry["clusters"],
                berries=base / entry["berries"],
            )
            for entry in manifest["images"]
        ]
    if not (args.clusters and args.berries):
        raise ArgumentError("vcc needs --manifest or both --clusters and --berries")
    return [ClosureJob(args.image_id, args.time, Path(args.clusters), Path(args.berries))]


def _run_closure_job(job: ClosureJob, use_iqr: bool, config: RunConfig) -> List[ClosureRecord]:
    clusters = clusters_from_json(read_json(job.clusters))
    berries = maskset_from_json(read_json(job.berries))
    return image_closure(
        job.image_id,
        job.capture_time,
        clusters,
        berries,
        mode=config.closure_mode,
        iqr=use_iqr,
        iqr_scope=config.iqr_scope,
        iqr_multiplier=config.iqr_multiplier,
        percentile_method=config.percentile_method,
        epsilon=config.epsilon,
    )


def cmd_vcc(args: argparse.Namespace, config: RunConfig) -> int:
    """Closure records for one image or a manifest of images."""
    jobs = _load_jobs(args)

    def run(job: ClosureJob) -> List[ClosureRecord]:
        return _run_closure_job(job, args.iqr, config)

    if config.jobs > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            batches = list(pool.map(run, jobs))
    else:
        batches = [run(job) for job in jobs]

    records = sorted(
        (r for batch in batches for r in batch),
        key=lambda r: (r.image_id, r.cluster_id, r.capture_time),
    )
    logger.info(f"{len(records)} closure record(s) from {len(jobs)} image(s)")
    _write_output(args, records_to_csv(records))
    return constants.EXIT_OK


# ── fit-closure ───────────────────────────────────────────────────────────────

def _reference_rows(fraction_p: float) -> Dict[str, Dict[str, Any]]:
    rows = {}
    for name, row in sorted(constants.REFERENCE_FITS.items()):
        model = AsymptoticModel(asym=row["asym"], r0=row["intercept"], rate=row["rate"])
        rows[name] = {
            **row,
            "implied_fraction_p": fraction_at_time(model, row["time_to_asymptote_weeks"]),
            "time_to_fraction_weeks": time_to_fraction(model, fraction_p),
        }
    return rows


def cmd_fit_closure(args: argparse.Namespace, config: RunConfig) -> int:
    """Fit the asymptotic closure curve to a closure CSV."""
    records = records_from_csv(read_text(args.closure_csv))
    series = build_series(records, config.closure_aggregate)
    points = series_points(series.observations(), series.means(), config.regression_input)
    result = fit_asymptotic(points, max_iterations=config.max_iterations)

    if not result.converged:
        message = f"Closure fit did not converge (status {result.status})"
        if args.strict:
            raise FitError(message, diagnostics={
                "status": result.status,
                "iterations": result.iterations,
                "rss": result.rss,
            })
        logger.warning(message)

    report = {key: _finite_or_none(value) for key, value in result.to_report(config.fraction_p).items()}
    report["status"] = result.status
    report["iterations"] = result.iterations
    report["input_mode"] = config.regression_input
    report["series"] = [
        {"time": p.time, "mean_vcc": p.mean_vcc, "n": len(p.values)} for p in series.points
    ]
    if args.compare:
        report["reference"] = _reference_rows(config.fraction_p)
    _write_output(args, dumps_json(report))

    if args.plot:
        curve = None
        if math.isfinite(result.model.rate):
            t_max = max(t for t, _ in points)
            ts = np.linspace(0.0, t_max, CURVE_SAMPLES)
            curve = list(zip(ts.tolist(), np.atleast_1d(eval_model(result.model, ts)).tolist()))
        atomic_write(args.plot, closure_curve_svg(points, curve))
    return constants.EXIT_OK


# ── evaluate ──────────────────────────────────────────────────────────────────

def _miou_percent(gt: DatasetIndex, pred: DatasetIndex, min_score: float) -> Optional[float]:
    """Cluster-vs-background mIoU over all images, in percent."""
    if not gt.images:
        return None
    cm = np.zeros((2, 2), dtype=np.int64)
    for img in gt.images:
        shape = (img.height, img.width)
        gt_labels = label_mask([c.mask for c in img.clusters], shape)
        predicted = pred.image(img.id).clusters if pred.has_image(img.id) else ()
        pred_labels = label_mask(
            [c.mask for c in predicted if c.score is None or c.score >= min_score], shape
        )
        cm += confusion_matrix(pred_labels, gt_labels, 2)
    return 100.0 * miou_from_confusion(cm)


def cmd_evaluate(args: argparse.Namespace, config: RunConfig) -> int:
    """AP, mIoU and counting errors of predictions against ground truth."""
    gt = parse_dataset(read_bytes(args.ground_truth), rasterize=config.rasterize)
    pred = parse_predictions(read_bytes(args.predictions), gt)
    if args.pred_points:
        pred = attach_points(pred, parse_points_csv(read_bytes(args.pred_points)))

    ap = average_precision(
        detections_from_index(pred),
        ground_truths_from_index(gt),
        max_detections=config.max_detections,
        jobs=config.jobs,
    )
    report: Dict[str, Any] = {
        "ap": ap.to_dict(scale=100.0),
        "miou": _miou_percent(gt, pred, config.miou_score),
    }

    if pred.counts[2] > 0:
        pairs = count_pairs(
            {img.id: len(img.berries) for img in gt.images},
            {img.id: len(img.berries) for img in pred.images},
            [img.id for img in gt.images],
        )
        report["counting"] = counting_report(pairs)

    _write_output(args, dumps_json(report))
    return constants.EXIT_OK


# ── plot-filter-boxplot ───────────────────────────────────────────────────────

def cmd_plot_filter_boxplot(args: argparse.Namespace, config: RunConfig) -> int:
    """Log-area boxplots of a berry mask set before and after IQR filtering."""
    before = load_maskset(read_bytes(args.before))
    if args.after:
        after = load_maskset(read_bytes(args.after))
    else:
        after = filter_masks_iqr(before, config.iqr_multiplier, config.epsilon, config.percentile_method)

    svg = boxplot_svg(
        [("before", log10_areas(before.areas)), ("after", log10_areas(after.areas))],
        title="Berry mask areas before and after IQR filtering",
        y_label="log10(area, px)",
    )
    if args.plot:
        atomic_write(args.plot, svg)
    else:
        _write_output(args, svg)
    return constants.EXIT_OK


# ── Parser ────────────────────────────────────────────────────────────────────

def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON settings file")
    common.add_argument("-o", "--output", type=Path, help="write the result here instead of stdout")
    common.add_argument("--plot", type=Path, help="also write an SVG chart to this path")
    common.add_argument("--jobs", type=int, help="worker threads for per-image work")
    common.add_argument("--seed", type=int, help="recorded in the run config; inputs are never randomized")
    common.add_argument("--strict", action="store_true", help="treat warnings and non-convergence as failures")
    common.add_argument("--log-file", type=Path, help="also log to this file")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    return common


def _add_iqr_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iqr-multiplier", dest="iqr_multiplier", type=float, help="IQR fence distance")
    p.add_argument("--percentile-method", dest="percentile_method", help="numpy percentile method")


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with all subcommands."""
    parser = argparse.ArgumentParser(
        prog=constants.APP_NAME,
        description="Grape cluster closure from segmentation and keypoint outputs.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {constants.APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_parser()

    p = sub.add_parser("validate", parents=[common], help="check an annotation dataset")
    p.add_argument("dataset", type=Path)
    p.add_argument("--points", type=Path, help="extra berry points CSV (image_id,x,y)")
    p.add_argument("--rasterize", choices=("lazy", "eager"))
    p.set_defaults(handler=cmd_validate, overrides=["rasterize"])

    p = sub.add_parser("stats", parents=[common], help="instance count statistics")
    p.add_argument("dataset", type=Path)
    p.add_argument("--points", type=Path, help="extra berry points CSV (image_id,x,y)")
    p.add_argument("--berry-plot", type=Path, help="write the berry histogram SVG here")
    p.set_defaults(handler=cmd_stats, overrides=[])

    p = sub.add_parser("extract-points", parents=[common], help="decode keypoints from a heatmap")
    p.add_argument("heatmap", type=Path, help="NPY v1.0 or 'HF' text heatmap")
    p.add_argument("--tau", type=float, help="confidence threshold")
    p.add_argument("--top-k", dest="top_k", type=int, help="maximum number of points")
    p.add_argument("--factor", dest="upsample_factor", type=int, help="upsampling factor")
    p.add_argument("--window", type=int, help="odd max-pool window size")
    p.add_argument("--prompts", type=Path, help="also write single-point prompts JSON here")
    p.add_argument("--upsampled", type=Path, help="also write the upsampled heatmap (NPY) here")
    p.set_defaults(handler=cmd_extract_points, overrides=["tau", "top_k", "upsample_factor", "window"])

    p = sub.add_parser("vcc", parents=[common], help="visual cluster closure per cluster")
    p.add_argument("--manifest", type=Path, help="batch manifest JSON")
    p.add_argument("--clusters", type=Path, help="cluster masks (JSON array of RLE objects)")
    p.add_argument("--berries", type=Path, help="berry masks (JSON array of RLE objects)")
    p.add_argument("--image-id", type=int, default=1)
    p.add_argument("--time", type=float, default=0.0, help="capture time in weeks")
    p.add_argument("--iqr", action="store_true", help="IQR-filter berry masks first")
    p.add_argument("--iqr-scope", dest="iqr_scope", choices=("image", "cluster"))
    p.add_argument("--closure-mode", dest="closure_mode", choices=constants.CLOSURE_MODES)
    _add_iqr_flags(p)
    p.set_defaults(
        handler=cmd_vcc,
        overrides=["iqr_scope", "closure_mode", "iqr_multiplier", "percentile_method"],
    )

    p = sub.add_parser("fit-closure", parents=[common], help="fit the closure-over-time curve")
    p.add_argument("closure_csv", type=Path)
    p.add_argument("--mode", dest="regression_input", choices=("points", "means"))
    p.add_argument("--aggregate", dest="closure_aggregate", choices=constants.CLOSURE_AGGREGATES)
    p.add_argument("--p", dest="fraction_p", type=float, help="fraction of the rise for the time report")
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--compare", action="store_true", help="include the published reference fits")
    p.set_defaults(
        handler=cmd_fit_closure,
        overrides=["regression_input", "closure_aggregate", "fraction_p", "max_iterations"],
    )

    p = sub.add_parser("evaluate", parents=[common], help="AP, mIoU and counting errors")
    p.add_argument("ground_truth", type=Path)
    p.add_argument("predictions", type=Path, help="annotation document or results list")
    p.add_argument("--pred-points", type=Path, help="predicted berry points CSV (image_id,x,y)")
    p.add_argument("--max-dets", dest="max_detections", type=int, help="per-image detection cap")
    p.add_argument("--miou-score", dest="miou_score", type=float, help="score threshold for mIoU")
    p.set_defaults(handler=cmd_evaluate, overrides=["max_detections", "miou_score"])

    p = sub.add_parser("plot-filter-boxplot", parents=[common], help="log-area boxplots around IQR filtering")
    p.add_argument("before", type=Path, help="berry masks before filtering")
    p.add_argument("after", type=Path, nargs="?", help="berry masks after filtering (default: filter before)")
    _add_iqr_flags(p)
    p.set_defaults(handler=cmd_plot_filter_boxplot, overrides=["iqr_multiplier", "percentile_method"])

    return parser
