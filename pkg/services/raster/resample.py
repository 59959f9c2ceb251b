"""
Bilinear resampling of a Raster4B to a new square pixel size.
"""
import logging
import math
from typing import Tuple

import numpy as np

from errors import InvalidInput
from services.raster.types import GeoTransform, Raster4B

logger = logging.getLogger(__name__)

_DIM_EPS = 1e-9


def output_dim(in_dim: int, in_size: float, target_size: float) -> int:
    """ceil(in_dim * in_size / target_size), tolerant of float noise on exact multiples."""
    return max(1, int(math.ceil(in_dim * in_size / target_size - _DIM_EPS)))


def _axis_sampling(in_dim: int, in_size: float, target_size: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    For each output pixel center, the two source indices and the fractional weight of the
    second one, in source pixel-center space (edges clamped).
    """
    n_out = output_dim(in_dim, in_size, target_size)
    scale = target_size / in_size
    centers = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    centers = np.clip(centers, 0.0, in_dim - 1)
    i0 = np.floor(centers).astype(np.intp)
    i1 = np.minimum(i0 + 1, in_dim - 1)
    frac = centers - i0
    return i0, i1, frac


def resample(raster: Raster4B, target_pixel_size: float) -> Raster4B:
    """
    Resample to target_pixel_size (CRS units per pixel, both axes). Values are bilinear in
    float64, rounded half-up and clamped to the dtype range. An output pixel is nodata when
    any neighbour with non-zero weight is nodata. A valid interpolated value that lands on
    the nodata value is moved one step away from it (nodata + 1, or nodata - 1 at the dtype
    maximum) so valid pixels never read back as nodata.
    """
    if not target_pixel_size > 0:
        raise InvalidInput(f"target_pixel_size must be > 0, got {target_pixel_size}")
    geo = raster.geo
    if geo.pixel_size_x == target_pixel_size and geo.pixel_size_y == target_pixel_size:
        return raster.with_pixels(raster.pixels.copy())

    x0, x1, fx = _axis_sampling(raster.width, geo.pixel_size_x, target_pixel_size)
    y0, y1, fy = _axis_sampling(raster.height, geo.pixel_size_y, target_pixel_size)
    src = raster.pixels.astype(np.float64)

    wx1 = fx[np.newaxis, :]
    wx0 = 1.0 - wx1
    wy1 = fy[:, np.newaxis]
    wy0 = 1.0 - wy1
    r0, r1 = y0[:, np.newaxis], y1[:, np.newaxis]
    c0, c1 = x0[np.newaxis, :], x1[np.newaxis, :]

    top = wx0 * src[:, r0, c0] + wx1 * src[:, r0, c1]
    bottom = wx0 * src[:, r1, c0] + wx1 * src[:, r1, c1]
    values = wy0 * top + wy1 * bottom

    info = np.iinfo(raster.dtype)
    out = np.clip(np.floor(values + 0.5), info.min, info.max).astype(raster.dtype)

    if raster.nodata is not None:
        mask = raster.nodata_mask()
        bad = (
            (mask[r0, c0] & (wy0 * wx0 > 0))
            | (mask[r0, c1] & (wy0 * wx1 > 0))
            | (mask[r1, c0] & (wy1 * wx0 > 0))
            | (mask[r1, c1] & (wy1 * wx1 > 0))
        )
        nudge = raster.nodata + 1 if raster.nodata < info.max else raster.nodata - 1
        collided = (out == raster.nodata) & ~bad[np.newaxis, :, :]
        if collided.any():
            logger.debug("Moved %s interpolated values off nodata %s", int(collided.sum()), raster.nodata)
        out[collided] = nudge
        out[:, bad] = raster.nodata

    new_geo = GeoTransform(
        origin_x=geo.origin_x,
        origin_y=geo.origin_y,
        pixel_size_x=float(target_pixel_size),
        pixel_size_y=float(target_pixel_size),
    )
    logger.debug(
        "Resampled %sx%s -> %sx%s at %s", raster.width, raster.height, out.shape[2], out.shape[1], target_pixel_size
    )
    return raster.with_pixels(out, geo=new_geo)
