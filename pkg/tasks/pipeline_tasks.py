"""
Pipeline tasks, one per CLI subcommand: load inputs, delegate to the service modules,
write artifacts and a JSON run log, return a summary dict.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config import CLASS_NAMES, settings
from errors import InvalidInput
from schemas import RunConfig, require_inputs
from services.analysis.change import change_report, write_report_csv
from services.analysis.charts import write_bars_svg
from services.dataset.curation import curate_with_stats, format_dataset_table
from services.dataset.labels import load_mask, load_polygons
from services.dataset.manifest import load_manifest, save_manifest
from services.dataset.split import split
from services.dataset.synthetic import (
    DEFAULT_SPLIT_SIZES,
    nearest_mean_accuracy,
    synth_layout,
    synth_manifest,
    synth_raster,
)
from services.inference.classify import classify_raster
from services.inference.classmap import read_cmap, write_cmap
from services.inference.majority_filter import majority_filter
from services.inference.render import render_map, render_png
from services.nn.checkpoint import load_checkpoint, save_checkpoint
from services.nn.evaluation import evaluate_manifest, write_confusion_csv
from services.nn.gradcheck import run_selftest as run_selftest_checks
from services.nn.training import train, write_metrics_csv
from services.raster.r4b_format import canonical_json, read_r4b, write_r4b
from services.raster.resample import resample
from storage import write_json_log

logger = logging.getLogger(__name__)


def _maybe_resample(raster, enabled: bool, target: float):
    if enabled and (raster.geo.pixel_size_x != target or raster.geo.pixel_size_y != target):
        logger.info("Resampling %sx%s raster from %s m to %s m", raster.width, raster.height, raster.geo.pixel_size_x, target)
        return resample(raster, target)
    return raster


def run_curate(cfg: RunConfig) -> Dict[str, Any]:
    require_inputs(cfg, "rasters", "labels")
    target = cfg.io.target_pixel_size()
    rasters = [_maybe_resample(read_r4b(p), cfg.io.resample, target) for p in cfg.io.rasters]
    polygons = load_polygons(cfg.io.labels)
    ids = cfg.io.raster_ids or [Path(p).stem for p in cfg.io.rasters]
    manifest, stats = curate_with_stats(rasters, polygons, cfg.curation, source_ids=ids)
    Path(cfg.io.manifest).parent.mkdir(parents=True, exist_ok=True)
    manifest_path, tile_path = save_manifest(manifest, cfg.io.manifest)
    logger.info(
        "Curated %s samples from %s rasters (%s tiles examined, %s conflicts, %s nodata, %s NDVI-filtered)",
        len(manifest), len(rasters), stats.tiles_examined, stats.overlap_conflicts, stats.nodata_skipped, stats.ndvi_filtered,
    )
    summary = {
        "manifest": str(manifest_path),
        "tiles": str(tile_path),
        "samples": len(manifest),
        "class_counts": manifest.class_counts(),
        "stats": {k: v for k, v in vars(stats).items()},
        "table": format_dataset_table(manifest),
    }
    write_json_log("curate", {k: v for k, v in summary.items() if k != "table"}, cfg.io.output_dir)
    return summary


def run_split(cfg: RunConfig) -> Dict[str, Any]:
    require_inputs(cfg, "manifest")
    manifest = split(load_manifest(cfg.io.manifest), cfg.split.seed, cfg.split.n_val, cfg.split.n_test)
    Path(cfg.io.split_manifest).parent.mkdir(parents=True, exist_ok=True)
    path, _ = save_manifest(manifest, cfg.io.split_manifest)
    counts = manifest.split_counts()
    logger.info("Split %s samples: %s", len(manifest), counts)
    return {"manifest": str(path), "split_counts": counts}


def run_train(cfg: RunConfig) -> Dict[str, Any]:
    require_inputs(cfg, "split_manifest")
    manifest = load_manifest(cfg.io.split_manifest)
    model_cfg = cfg.model.build()
    result = train(manifest, model_cfg, cfg.train, pixel_size_m=cfg.io.target_pixel_size())
    final_path = save_checkpoint(result.final, cfg.io.checkpoint)
    best_path = save_checkpoint(result.best, cfg.io.best_checkpoint_path())
    metrics_path = write_metrics_csv(result.metrics, cfg.io.metrics)
    summary = {
        **result.summary(),
        "checkpoint": str(final_path),
        "best_checkpoint": str(best_path),
        "metrics": str(metrics_path),
    }
    summary["log"] = write_json_log("train", summary, cfg.io.output_dir)
    return summary


def run_eval(
    cfg: RunConfig,
    checkpoint: Optional[str] = None,
    manifest_path: Optional[str] = None,
    split_name: str = "test",
    confusion_out: Optional[str] = None,
) -> Dict[str, Any]:
    ckpt_path = checkpoint or str(cfg.io.best_checkpoint_path())
    ckpt = load_checkpoint(ckpt_path)
    manifest = load_manifest(manifest_path or cfg.io.split_manifest)
    result = evaluate_manifest(ckpt, manifest, split_name)
    summary = {"checkpoint": ckpt_path, "split": split_name, **result.to_dict()}
    if confusion_out:
        summary["confusion_csv"] = str(write_confusion_csv(result, confusion_out))
    return summary


def run_classify(
    checkpoint: str,
    raster_path: str,
    out: str,
    apply_filter: bool = False,
    year_tag: Optional[str] = None,
    batch_size: Optional[int] = None,
    strict: Optional[bool] = None,
    do_resample: bool = False,
) -> Dict[str, Any]:
    ckpt = load_checkpoint(checkpoint)
    raster = read_r4b(raster_path)
    if do_resample:
        raster = _maybe_resample(raster, True, ckpt.pixel_size_m or settings.target_pixel_size_m)
    cmap = classify_raster(raster, ckpt, batch_size=batch_size, year_tag=year_tag, strict=strict)
    if apply_filter:
        cmap = majority_filter(cmap)
    write_cmap(cmap, out)
    return {"map": out, "width_tiles": cmap.width_tiles, "height_tiles": cmap.height_tiles, "filtered": apply_filter}


def run_filter(map_path: str, out: str) -> Dict[str, Any]:
    cmap = majority_filter(read_cmap(map_path))
    write_cmap(cmap, out)
    return {"map": out}


def run_render(map_path: str, out: str, png: Optional[str] = None, mask_path: Optional[str] = None) -> Dict[str, Any]:
    cmap = read_cmap(map_path)
    render_map(cmap, out)
    summary: Dict[str, Any] = {"image": out}
    if png:
        mask = load_mask(mask_path) if mask_path else None
        summary["png"] = str(render_png(cmap, png, mask=mask))
    return summary


def run_report(
    map_paths: Sequence[str], out_dir: str, mask_path: Optional[str] = None, log_dir: Optional[str] = None
) -> Dict[str, Any]:
    """Writes report.csv, distribution.svg and one PPM per year into out_dir; the run log goes to log_dir only."""
    if not map_paths:
        raise InvalidInput("report needs at least two maps")
    maps = [read_cmap(p) for p in map_paths]
    for p, m in zip(map_paths, maps):
        if m.year_tag is None:
            m.year_tag = Path(p).stem
    mask = load_mask(mask_path) if mask_path else None
    report = change_report(maps, mask, mask_ref=mask_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = write_report_csv(report, out / "report.csv")
    svg_path = write_bars_svg(report, out / "distribution.svg")
    images = [str(render_map(m, out / f"map_{m.year_tag}.ppm")) for m in maps]
    summary = {"csv": str(csv_path), "svg": str(svg_path), "images": images, "years": report.years}
    write_json_log("report", {**summary, **report.to_dict()}, log_dir)
    return summary


def run_synth(out_dir: str, seed: int = 0, sizes: Optional[Dict[str, int]] = None) -> Dict[str, Any]:
    """Acceptance dataset: pre-split manifest, 320x320 layout raster and its layout JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = synth_manifest(sizes or DEFAULT_SPLIT_SIZES, seed=seed)
    oracle = nearest_mean_accuracy(manifest)
    manifest_path, tile_path = save_manifest(manifest, out / "synthetic.jsonl")
    layout = synth_layout(seed=seed)
    raster = synth_raster(layout, seed=seed + 1)
    raster_path = out / "synthetic_layout.r4b"
    write_r4b(raster, raster_path)
    layout_path = out / "synthetic_layout.json"
    layout_path.write_bytes(canonical_json({"class_names": list(CLASS_NAMES), "rows": layout.tolist()}) + b"\n")
    logger.info("Synthetic data written to %s; nearest-mean oracle accuracy %.4f", out, oracle)
    return {
        "manifest": str(manifest_path),
        "tiles": str(tile_path),
        "raster": str(raster_path),
        "layout": str(layout_path),
        "split_counts": manifest.split_counts(),
        "nearest_mean_accuracy": oracle,
    }


def load_layout(path: str) -> np.ndarray:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return np.asarray(data["rows"], dtype=np.uint8)


def run_selftest(instances: int = 20, oracle_configs: int = 100, seed: int = 0) -> Dict[str, Any]:
    results = run_selftest_checks(instances, oracle_configs, seed)
    failed: List[str] = [r.name for r in results if not r.passed]
    return {"passed": not failed, "checks": len(results), "failed": failed}
