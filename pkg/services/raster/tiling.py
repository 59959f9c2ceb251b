"""
Dicing rasters into non-overlapping tiles and edge-padding for whole-raster inference.
"""
from typing import Iterator, List

import numpy as np

from config import TILE_SIZE
from errors import InvalidInput
from services.raster.types import Raster4B, Tile


def tile_origins(width: int, height: int, size: int = TILE_SIZE) -> List[tuple]:
    """(col, row) origins of the full tiles of a width x height grid, row-major."""
    return [
        (col, row)
        for row in range(0, (height // size) * size, size)
        for col in range(0, (width // size) * size, size)
    ]


def iter_tiles(raster: Raster4B, size: int = TILE_SIZE) -> Iterator[Tile]:
    for col, row in tile_origins(raster.width, raster.height, size):
        data = raster.pixels[:, row : row + size, col : col + size].copy()
        yield Tile(data=data, origin_col=col, origin_row=row)


def dice(raster: Raster4B) -> List[Tile]:
    """Full 32x32 tiles covering the top-left floor(w/32) x floor(h/32) grid; remainders dropped."""
    return list(iter_tiles(raster))


def pad_to_multiple(raster: Raster4B, m: int) -> Raster4B:
    """Edge-replicate right/bottom so width and height are multiples of m; origin unchanged."""
    if m < 1:
        raise InvalidInput(f"m must be >= 1, got {m}")
    pad_w = (-raster.width) % m
    pad_h = (-raster.height) % m
    if pad_w == 0 and pad_h == 0:
        return raster
    pixels = np.pad(raster.pixels, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge")
    return raster.with_pixels(pixels)
