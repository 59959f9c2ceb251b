"""
Curation: labeled polygons + rasters -> filtered Samples.

A tile becomes a sample when it passes the coverage rule for a polygon whose species
density meets the threshold, holds no nodata, and (for the NDVI-filtered classes) has a
mean NDVI at or above the threshold. Tiles matching polygons of two classes are dropped.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from config import (
    CLASS_NAMES,
    CURATION_DEFAULT_DENSITY_THRESHOLD,
    CURATION_DEFAULT_NDVI_CLASSES,
    CURATION_DEFAULT_NDVI_THRESHOLD,
    N_CLASSES,
    TILE_SIZE,
    thread_count,
)
from errors import EmptyResult, InvalidInput, OverlapConflict
from services.dataset.labels import LabelPolygon
from services.dataset.manifest import Manifest, Sample, compute_band_stats
from services.raster.ndvi import mean_ndvi
from services.raster.tiling import dice
from services.raster.types import Raster4B, Tile

logger = logging.getLogger(__name__)


class CoverageRule(BaseModel):
    """Tile-in-polygon predicate: coverage points that must lie strictly inside the polygon."""

    model_config = ConfigDict(extra="forbid")

    require_center: bool = True
    require_corners: bool = True
    # Corners are moved this many pixels towards the tile center before testing
    corner_inset_px: float = Field(0.0, ge=0.0, lt=TILE_SIZE / 2)


class CurationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    density_threshold: float = Field(CURATION_DEFAULT_DENSITY_THRESHOLD, ge=0.0, le=1.0)
    ndvi_threshold: float = Field(CURATION_DEFAULT_NDVI_THRESHOLD, ge=-1.0, le=1.0)
    ndvi_filtered_classes: List[int] = Field(default_factory=lambda: list(CURATION_DEFAULT_NDVI_CLASSES))
    coverage_rule: CoverageRule = Field(default_factory=CoverageRule)

    @field_validator("ndvi_filtered_classes")
    @classmethod
    def _valid_classes(cls, v: List[int]) -> List[int]:
        if any(not 0 <= c < N_CLASSES for c in v):
            raise ValueError(f"ndvi_filtered_classes must be within 0..{N_CLASSES - 1}")
        return sorted(set(v))


@dataclass
class CurationStats:
    tiles_examined: int = 0
    tiles_covered: int = 0
    overlap_conflicts: int = 0
    nodata_skipped: int = 0
    ndvi_filtered: int = 0
    polygons_below_density: int = 0
    per_class: Dict[str, int] = field(default_factory=lambda: {name: 0 for name in CLASS_NAMES})

    def merge(self, other: "CurationStats") -> None:
        self.tiles_examined += other.tiles_examined
        self.tiles_covered += other.tiles_covered
        self.overlap_conflicts += other.overlap_conflicts
        self.nodata_skipped += other.nodata_skipped
        self.ndvi_filtered += other.ndvi_filtered
        for name, n in other.per_class.items():
            self.per_class[name] += n


def coverage_points(raster: Raster4B, tiles: Sequence[Tile], rule: CoverageRule) -> Tuple[np.ndarray, np.ndarray]:
    """CRS (x, y) of every tile's coverage points, shape (n_tiles, n_points) each."""
    offsets: List[Tuple[float, float]] = []
    if rule.require_center:
        offsets.append((TILE_SIZE / 2, TILE_SIZE / 2))
    if rule.require_corners:
        lo, hi = rule.corner_inset_px, TILE_SIZE - rule.corner_inset_px
        offsets.extend([(lo, lo), (hi, lo), (lo, hi), (hi, hi)])
    if not offsets:
        raise InvalidInput("Coverage rule must test the center, the corners, or both")
    cols = np.array([t.origin_col for t in tiles], dtype=np.float64)[:, np.newaxis]
    rows = np.array([t.origin_row for t in tiles], dtype=np.float64)[:, np.newaxis]
    dc = np.array([o[0] for o in offsets])[np.newaxis, :]
    dr = np.array([o[1] for o in offsets])[np.newaxis, :]
    geo = raster.geo
    xs = geo.origin_x + (cols + dc) * geo.pixel_size_x
    ys = geo.origin_y - (rows + dr) * geo.pixel_size_y
    return xs, ys


def _curate_raster(
    source_id: str,
    raster: Raster4B,
    polygons: Sequence[LabelPolygon],
    cfg: CurationConfig,
) -> Tuple[List[Sample], CurationStats]:
    stats = CurationStats()
    tiles = dice(raster)
    stats.tiles_examined = len(tiles)
    if not tiles or not polygons:
        return [], stats

    xs, ys = coverage_points(raster, tiles, cfg.coverage_rule)
    # (n_tiles, n_polygons): tile passes the coverage rule for polygon j
    matches = np.stack([p.contains_xy(xs, ys).all(axis=1) for p in polygons], axis=1)
    classes = np.array([p.class_id for p in polygons])
    ndvi_classes = set(cfg.ndvi_filtered_classes)

    samples: List[Sample] = []
    for i, tile in enumerate(tiles):
        hit = np.flatnonzero(matches[i])
        if hit.size == 0:
            continue
        stats.tiles_covered += 1
        labels = np.unique(classes[hit])
        if labels.size > 1:
            stats.overlap_conflicts += 1
            continue
        if raster.nodata is not None and np.any(tile.data == raster.nodata):
            stats.nodata_skipped += 1
            continue
        label = int(labels[0])
        tile_ndvi = mean_ndvi(tile)
        if label in ndvi_classes and tile_ndvi < cfg.ndvi_threshold:
            stats.ndvi_filtered += 1
            continue
        samples.append(Sample(tile=tile, label=label, source_id=source_id, mean_ndvi=tile_ndvi))
        stats.per_class[CLASS_NAMES[label]] += 1

    logger.info(
        "Curated %s samples from %s (%s tiles, %s covered, %s conflicts, %s NDVI-filtered)",
        len(samples), source_id, stats.tiles_examined, stats.tiles_covered,
        stats.overlap_conflicts, stats.ndvi_filtered,
    )
    return samples, stats


def curate_with_stats(
    rasters: Sequence[Raster4B],
    polygons: Sequence[LabelPolygon],
    cfg: Optional[CurationConfig] = None,
    source_ids: Optional[Sequence[str]] = None,
    threads: Optional[int] = None,
) -> Tuple[Manifest, CurationStats]:
    """
    curate() plus its counters. Rasters are processed in parallel and merged in declared
    order, so output is independent of the thread count.
    """
    cfg = cfg or CurationConfig()
    ids = list(source_ids) if source_ids is not None else [f"raster-{i}" for i in range(len(rasters))]
    if len(ids) != len(rasters):
        raise InvalidInput("source_ids must match rasters one to one")

    eligible = [p for p in polygons if p.density >= cfg.density_threshold]
    stats = CurationStats(polygons_below_density=len(polygons) - len(eligible))
    if stats.polygons_below_density:
        logger.info("Skipping %s polygons below density %.2f", stats.polygons_below_density, cfg.density_threshold)

    workers = max(1, min(threads or thread_count(), len(rasters) or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(lambda item: _curate_raster(item[0], item[1], eligible, cfg), zip(ids, rasters)))

    samples: List[Sample] = []
    for raster_samples, raster_stats in results:
        samples.extend(raster_samples)
        stats.merge(raster_stats)

    if stats.overlap_conflicts:
        logger.warning("Discarded %s tiles matching polygons of different classes", stats.overlap_conflicts)
    if not samples:
        if stats.tiles_covered > 0 and stats.overlap_conflicts == stats.tiles_covered:
            raise OverlapConflict(f"All {stats.tiles_covered} covered tiles matched conflicting classes")
        raise EmptyResult(
            "No samples survived curation "
            f"(density_threshold={cfg.density_threshold}, ndvi_threshold={cfg.ndvi_threshold})"
        )

    tiles = np.stack([s.tile.data for s in samples])
    manifest = Manifest(
        samples=samples,
        splits=[None] * len(samples),
        band_stats=compute_band_stats(tiles),
        curation_config=cfg.model_dump(mode="json"),
    )
    return manifest, stats


def curate(
    rasters: Sequence[Raster4B],
    polygons: Sequence[LabelPolygon],
    cfg: Optional[CurationConfig] = None,
    source_ids: Optional[Sequence[str]] = None,
) -> Manifest:
    """Unsplit manifest in raster order, then row-major tile order."""
    manifest, _ = curate_with_stats(rasters, polygons, cfg, source_ids)
    return manifest


def dataset_table(manifest: Manifest) -> List[Dict[str, Any]]:
    """Rows (name, label, count) plus a total row, in the published dataset table layout."""
    counts = manifest.class_counts()
    rows: List[Dict[str, Any]] = [
        {"tree_type": name, "label": i, "points": counts[name]} for i, name in enumerate(CLASS_NAMES)
    ]
    rows.append({"tree_type": "Total", "label": None, "points": sum(counts.values())})
    return rows


def format_dataset_table(manifest: Manifest) -> str:
    lines = [f"{'Tree type':<16}{'Label':>6}{'# points':>12}", "-" * 34]
    for row in dataset_table(manifest):
        label = "" if row["label"] is None else str(row["label"])
        if row["label"] is None:
            lines.append("-" * 34)
        lines.append(f"{row['tree_type']:<16}{label:>6}{row['points']:>12,}")
    return "\n".join(lines)
