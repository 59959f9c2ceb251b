"""
Whole-raster classification: pad to a multiple of 32, dice, normalize with the
checkpoint's band statistics, eval-mode forward in batches, argmax per tile.
Tiles with more than the allowed nodata fraction become 255.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional

import numpy as np

from config import N_BANDS, NODATA_CLASS, TILE_SIZE, settings, thread_count
from errors import ResolutionMismatch
from services.dataset.manifest import normalize_batch
from services.inference.classmap import ClassMap
from services.nn.checkpoint import Checkpoint
from services.raster.tiling import pad_to_multiple
from services.raster.types import Raster4B

logger = logging.getLogger(__name__)


def check_resolution(raster: Raster4B, checkpoint: Checkpoint, strict: Optional[bool] = None) -> bool:
    """True when the raster pixel size matches the training resolution; warns or raises otherwise."""
    want = checkpoint.pixel_size_m
    if want is None:
        return True
    have = (raster.geo.pixel_size_x, raster.geo.pixel_size_y)
    if all(math.isclose(h, want, rel_tol=1e-6) for h in have):
        return True
    strict = settings.inference_strict_resolution if strict is None else strict
    msg = f"Raster pixel size {have} differs from training resolution {want}; resample first"
    if strict:
        raise ResolutionMismatch(msg)
    logger.warning(msg)
    return False


def tile_stack(raster: Raster4B) -> np.ndarray:
    """(th * tw, 4, 32, 32) tiles of a raster whose dims are multiples of 32, row-major."""
    th, tw = raster.height // TILE_SIZE, raster.width // TILE_SIZE
    blocks = raster.pixels.reshape(N_BANDS, th, TILE_SIZE, tw, TILE_SIZE)
    return np.ascontiguousarray(blocks.transpose(1, 3, 0, 2, 4).reshape(th * tw, N_BANDS, TILE_SIZE, TILE_SIZE))


def tile_nodata_fraction(raster: Raster4B) -> np.ndarray:
    """(th, tw) fraction of nodata pixels per tile."""
    th, tw = raster.height // TILE_SIZE, raster.width // TILE_SIZE
    mask = raster.nodata_mask().reshape(th, TILE_SIZE, tw, TILE_SIZE)
    return mask.mean(axis=(1, 3))


def classify_raster(
    raster: Raster4B,
    checkpoint: Checkpoint,
    batch_size: Optional[int] = None,
    year_tag: Optional[str] = None,
    strict: Optional[bool] = None,
    workers: Optional[int] = None,
    nodata_max_fraction: Optional[float] = None,
) -> ClassMap:
    """Result is independent of batch_size and worker count."""
    batch_size = batch_size or settings.inference_batch_size
    max_frac = settings.inference_nodata_max_fraction if nodata_max_fraction is None else nodata_max_fraction
    check_resolution(raster, checkpoint, strict)
    model = checkpoint.to_model()

    padded = pad_to_multiple(raster, TILE_SIZE)
    th, tw = padded.height // TILE_SIZE, padded.width // TILE_SIZE
    frac = tile_nodata_fraction(padded).reshape(-1)
    cells = np.full(th * tw, NODATA_CLASS, dtype=np.uint8)
    todo = np.flatnonzero(frac <= max_frac)

    if todo.size:
        tiles = tile_stack(padded)
        starts: List[int] = list(range(0, todo.size, batch_size))

        def run(start: int) -> np.ndarray:
            idx = todo[start : start + batch_size]
            x = normalize_batch(tiles[idx], checkpoint.band_stats)
            return model.forward(x, training=False).argmax(axis=1)

        n_workers = min(workers or thread_count(), len(starts))
        if n_workers > 1:
            with ThreadPoolExecutor(max_workers=n_workers) as pool:
                preds = list(pool.map(run, starts))
        else:
            preds = [run(s) for s in starts]
        for start, pred in zip(starts, preds):
            cells[todo[start : start + batch_size]] = pred.astype(np.uint8)

    logger.info(
        "Classified %sx%s raster into %sx%s cells (%s nodata)",
        raster.width, raster.height, tw, th, int(th * tw - todo.size),
    )
    return ClassMap(cells=cells.reshape(th, tw), geo=padded.geo.scaled(TILE_SIZE), year_tag=year_tag)
