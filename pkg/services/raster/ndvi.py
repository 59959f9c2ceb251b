"""
NDVI = (NIR - R) / (NIR + R) per pixel, for rasters, tiles or raw (4, H, W) arrays.
"""
from typing import Optional, Union

import numpy as np

from services.raster.types import Raster4B, Tile

R_BAND = 0
NIR_BAND = 3

BandSource = Union[Raster4B, Tile, np.ndarray]


def ndvi(source: BandSource, nodata: Optional[int] = None) -> np.ndarray:
    """
    Per-pixel NDVI in float64. NIR + R == 0 gives 0; nodata pixels (any band equal to the
    nodata value) give NaN.
    """
    if isinstance(source, Raster4B):
        bands = source.pixels
        nodata = source.nodata if nodata is None else nodata
    elif isinstance(source, Tile):
        bands = source.data
    else:
        bands = np.asarray(source)
    red = bands[R_BAND].astype(np.float64)
    nir = bands[NIR_BAND].astype(np.float64)
    denom = nir + red
    out = np.zeros_like(denom)
    np.divide(nir - red, denom, out=out, where=denom != 0)
    if nodata is not None:
        out[np.any(bands == nodata, axis=0)] = np.nan
    return out


def mean_ndvi(source: BandSource, nodata: Optional[int] = None) -> float:
    """Mean NDVI over valid pixels; NaN when every pixel is nodata."""
    values = ndvi(source, nodata=nodata)
    valid = values[~np.isnan(values)]
    if valid.size == 0:
        return float("nan")
    return float(valid.mean())
